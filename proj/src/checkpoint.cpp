// Copyright 2026 The HelioQA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "helioqa/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "helioqa/error.hpp"
#include "helioqa/fileio.hpp"

namespace helioqa::microlm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kDtype = "f64";

void append_raw(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

void append_tensor(std::string& out, const Tensor& t) {
  append_raw(out, t.data.data(), t.data.size() * sizeof(double));
}

nlohmann::json table_entry(const std::string& name, const Tensor& t) {
  return {{"name", name}, {"dtype", kDtype}, {"shape", t.shape}};
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void read(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  Tensor tensor(const nlohmann::json& entry) {
    if (entry.at("dtype").get<std::string>() != kDtype) throw IoError("unsupported tensor dtype");
    Tensor t;
    t.shape = entry.at("shape").get<std::vector<int>>();
    std::size_t n = 1;
    for (int d : t.shape) {
      if (d <= 0) throw IoError("non-positive tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    t.data.resize(n);
    read(t.data.data(), n * sizeof(double));
    return t;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_base(const ModelState& state) {
  std::string out;
  for (const auto& [name, t] : state.base) append_tensor(out, t);
  return out;
}

std::string serialize_adapters(const ModelState& state) {
  std::string out;
  for (const auto& [name, ad] : state.adapters) {
    append_tensor(out, ad.a);
    append_tensor(out, ad.b);
  }
  return out;
}

std::string serialize_checkpoint(const ModelState& state) {
  nlohmann::json header;
  header["config"] = to_json(state.config);
  header["rng_seed"] = state.rng_seed;
  auto base = nlohmann::json::array();
  for (const auto& [name, t] : state.base) base.push_back(table_entry(name, t));
  auto adapters = nlohmann::json::array();
  for (const auto& [name, ad] : state.adapters) {
    adapters.push_back(table_entry(name + ".lora_a", ad.a));
    adapters.push_back(table_entry(name + ".lora_b", ad.b));
  }
  header["sections"] = {{{"name", "base"}, {"tensors", base}},
                        {{"name", "adapters"}, {"tensors", adapters}}};
  const std::string header_text = header.dump();

  std::string out;
  append_raw(out, kCheckpointMagic, 4);
  const std::uint32_t version = kCheckpointVersion;
  append_raw(out, &version, sizeof version);
  const std::uint64_t header_len = header_text.size();
  append_raw(out, &header_len, sizeof header_len);
  out += header_text;
  out += serialize_base(state);
  out += serialize_adapters(state);
  return out;
}

ModelState deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError("not a checkpoint (bad magic)");
  std::uint32_t version = 0;
  r.read(&version, sizeof version);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  std::uint64_t header_len = 0;
  r.read(&header_len, sizeof header_len);
  if (header_len > bytes.size()) throw IoError("checkpoint header length out of range");
  std::string header_text(header_len, '\0');
  r.read(header_text.data(), header_len);

  ModelState s;
  try {
    const auto header = nlohmann::json::parse(header_text);
    s.config = model_config_from_json(header.at("config"));
    s.rng_seed = header.at("rng_seed").get<std::uint64_t>();
    const auto& sections = header.at("sections");
    if (sections.size() != 2 || sections[0].at("name") != "base" || sections[1].at("name") != "adapters") {
      throw IoError("checkpoint sections must be [base, adapters]");
    }
    for (const auto& e : sections[0].at("tensors")) {
      s.base.emplace(e.at("name").get<std::string>(), r.tensor(e));
    }
    const auto& ad = sections[1].at("tensors");
    if (ad.size() % 2 != 0) throw IoError("adapter table must list A/B pairs");
    for (std::size_t i = 0; i < ad.size(); i += 2) {
      const auto a_name = ad[i].at("name").get<std::string>();
      const auto b_name = ad[i + 1].at("name").get<std::string>();
      const std::string suffix = ".lora_a";
      if (a_name.size() <= suffix.size() || a_name.substr(a_name.size() - suffix.size()) != suffix) {
        throw IoError("unexpected adapter tensor name " + a_name);
      }
      const std::string name = a_name.substr(0, a_name.size() - suffix.size());
      if (b_name != name + ".lora_b") throw IoError("unexpected adapter tensor name " + b_name);
      Adapter adapter;
      adapter.a = r.tensor(ad[i]);
      adapter.b = r.tensor(ad[i + 1]);
      s.adapters.emplace(name, std::move(adapter));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (!r.at_end()) throw IoError("trailing bytes after checkpoint payload");
  return s;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(state));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace helioqa::microlm
