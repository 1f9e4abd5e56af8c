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

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "helioqa/remote_judge.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "helioqa/error.hpp"
#include "helioqa/rng.hpp"

namespace helioqa::arbiter {

double backoff_delay(const RetryPolicy& policy, int retry, double unit_draw) {
  return unit_draw * policy.base_delay_seconds * std::pow(policy.backoff_factor, retry - 1);
}

Transport make_http_transport(const std::string& url, double timeout_seconds, const std::string& token) {
  const auto scheme_end = url.find("://");
  const std::string scheme = scheme_end == std::string::npos ? "" : url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ConfigError("judge URL needs an http:// or https:// scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin = url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

  return [origin, path, timeout_seconds, token](const std::string& body) {
    httplib::Client client(origin);
    const auto timeout = std::chrono::duration<double>(timeout_seconds);
    const auto sec = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout - sec);
    client.set_connection_timeout(sec.count(), usec.count());
    client.set_read_timeout(sec.count(), usec.count());
    client.set_write_timeout(sec.count(), usec.count());
    httplib::Headers headers;
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) throw TransportError("judge request failed: " + httplib::to_string(res.error()));
    return HttpResponse{res->status, res->body};
  };
}

namespace {

std::string excerpt(std::string_view body) {
  constexpr std::size_t kMax = 200;
  return body.size() <= kMax ? std::string(body) : std::string(body.substr(0, kMax)) + "...";
}

}  // namespace

JudgeReply parse_judge_reply(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError("judge reply is not JSON: " + excerpt(body));
  }
  if (!j.is_object() || !j.contains("verdict") || !j["verdict"].is_string()) {
    throw ProtocolError("judge reply lacks a string verdict: " + excerpt(body));
  }
  JudgeReply reply;
  const auto verdict = j["verdict"].get<std::string>();
  if (verdict == "1") {
    reply.choice = Choice::kFirst;
  } else if (verdict == "2") {
    reply.choice = Choice::kSecond;
  } else if (verdict == "tie") {
    reply.choice = Choice::kTie;
  } else {
    throw ProtocolError("judge verdict must be \"1\", \"2\" or \"tie\": " + excerpt(body));
  }
  if (j.contains("rationale")) {
    if (!j["rationale"].is_string()) throw ProtocolError("judge rationale must be a string: " + excerpt(body));
    reply.rationale = j["rationale"].get<std::string>();
  }
  return reply;
}

RemoteJudge::RemoteJudge(std::string url, RetryPolicy policy)
    : url_(std::move(url)), policy_(policy), sleeper_([](double s) {
        std::this_thread::sleep_for(std::chrono::duration<double>(s));
      }) {
  const char* token = std::getenv(kJudgeTokenEnv);
  transport_ = make_http_transport(url_, policy_.timeout_seconds, token ? token : "");
  jitter_seed_ = std::random_device{}();
}

RemoteJudge::RemoteJudge(std::string url, RetryPolicy policy, Transport transport, Sleeper sleeper,
                         std::uint64_t jitter_seed)
    : url_(std::move(url)),
      policy_(policy),
      transport_(std::move(transport)),
      sleeper_(std::move(sleeper)),
      jitter_seed_(jitter_seed) {}

JudgeReply RemoteJudge::evaluate(const JudgeRequest& request) {
  if (policy_.max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
  const std::string body = judge_payload(request).dump();
  Rng jitter(mix_seed(jitter_seed_, stable_hash(body)));
  std::string last_error;
  for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt) {
    try {
      const auto res = transport_(body);
      if (res.status >= 200 && res.status < 300) return parse_judge_reply(res.body);
      if (res.status != 429 && res.status < 500) {
        throw ProtocolError("judge returned HTTP " + std::to_string(res.status) + ": " + excerpt(res.body));
      }
      last_error = "HTTP " + std::to_string(res.status);
    } catch (const TransportError& e) {
      last_error = e.what();
    }
    if (attempt < policy_.max_attempts) {
      const double delay = backoff_delay(policy_, attempt, uniform01(jitter));
      spdlog::warn("judge attempt {}/{} failed ({}); retrying in {:.2f}s", attempt, policy_.max_attempts,
                   last_error, delay);
      sleeper_(delay);
    }
  }
  throw TransportError("judge unavailable after " + std::to_string(policy_.max_attempts) +
                       " attempts: " + last_error);
}

}  // namespace helioqa::arbiter
