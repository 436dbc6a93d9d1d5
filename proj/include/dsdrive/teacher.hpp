#pragma once

#include <memory>
#include <string>

#include "dsdrive/distill.hpp"

namespace dsdrive {

// Answer source for dataset generation. The scripted oracle is the shipped
// default; the HTTP client reaches a live model serving the same contract.
class TeacherClient {
 public:
  virtual ~TeacherClient() = default;
  virtual TeacherAnswer query(const std::string& clip_id, const SceneSequence& frames,
                              const PromptBundle& prompts) = 0;
};

// Fills the four sections deterministically from ground-truth state.
class ScriptedTeacher : public TeacherClient {
 public:
  explicit ScriptedTeacher(ScenarioMeta meta) : meta_(std::move(meta)) {}
  TeacherAnswer query(const std::string& clip_id, const SceneSequence& frames,
                      const PromptBundle& prompts) override;

 private:
  ScenarioMeta meta_;
};

struct HttpTeacherConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8801
  int attempts = 3;
  int initial_backoff_ms = 100;  // doubles per retry
  int timeout_seconds = 10;
};

inline constexpr const char* kTeacherEndpoint = "/v1/teacher";

// POST {clip_id, frames, system, prompts[3], navigation} to /v1/teacher;
// expects {scenario, key_object, plan, explanation}. Transport failures and
// non-2xx responses are retried with exponential backoff, then raise IoError;
// a malformed body raises ValidationError carrying the raw payload.
class HttpTeacherClient : public TeacherClient {
 public:
  explicit HttpTeacherClient(HttpTeacherConfig cfg) : cfg_(std::move(cfg)) {}
  TeacherAnswer query(const std::string& clip_id, const SceneSequence& frames,
                      const PromptBundle& prompts) override;

 private:
  HttpTeacherConfig cfg_;
};

// Queries and validates; the uniform entry point for both teacher kinds.
TeacherAnswer query_teacher(TeacherClient& client, const std::string& clip_id,
                            const SceneSequence& frames, const PromptBundle& prompts);

}  // namespace dsdrive
