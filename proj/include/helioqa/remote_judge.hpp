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

// HTTP judge client with retry, exponential backoff and full jitter.

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include "helioqa/arbiter.hpp"

namespace helioqa::arbiter {

inline constexpr const char* kJudgeTokenEnv = "HELIOQA_JUDGE_TOKEN";

struct RetryPolicy {
  int max_attempts = 3;
  double base_delay_seconds = 1.0;
  double backoff_factor = 2.0;
  double timeout_seconds = 60.0;
};

/// Delay before retry number `retry` (1-based): uniform in
/// [0, base * factor^(retry - 1)).
double backoff_delay(const RetryPolicy& policy, int retry, double unit_draw);

struct HttpResponse {
  int status = 0;
  std::string body;
};

/// POSTs a JSON body. Throws TransportError on connection failure or
/// timeout.
using Transport = std::function<HttpResponse(const std::string& body)>;
using Sleeper = std::function<void(double seconds)>;

/// httplib transport for an http:// or https:// URL. A non-empty token is
/// sent as a Bearer Authorization header.
Transport make_http_transport(const std::string& url, double timeout_seconds, const std::string& token);

/// Parses {"verdict": "1"|"2"|"tie", "rationale": str}. Throws
/// ProtocolError carrying an excerpt of the reply.
JudgeReply parse_judge_reply(std::string_view body);

class RemoteJudge : public Judge {
 public:
  /// Reads the auth token from kJudgeTokenEnv.
  RemoteJudge(std::string url, RetryPolicy policy = {});
  /// For tests: explicit transport and sleeper.
  RemoteJudge(std::string url, RetryPolicy policy, Transport transport, Sleeper sleeper,
              std::uint64_t jitter_seed = 0);

  /// Retries transport errors, 5xx and 429. Throws TransportError when
  /// attempts run out, ProtocolError for other statuses or bad replies.
  JudgeReply evaluate(const JudgeRequest& request) override;
  std::string id() const override { return "remote:" + url_; }

 private:
  std::string url_;
  RetryPolicy policy_;
  Transport transport_;
  Sleeper sleeper_;
  std::uint64_t jitter_seed_ = 0;
};

}  // namespace helioqa::arbiter
