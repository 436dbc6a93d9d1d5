#pragma once

#include <string>
#include <vector>

#include "dsdrive/heads.hpp"
#include "dsdrive/scene.hpp"
#include "dsdrive/tokenizer.hpp"

namespace dsdrive {

// The driving model's own question text (X_qn): one fixed commanding sentence.
inline constexpr const char* kDrivingQuestion = "think and answer";

// Prompt set for the teacher: system framing plus the three staged questions
// (scenario comprehension, key-item description, plan + explanation).
struct PromptBundle {
  std::string system;
  std::string q1;
  std::string q2;
  std::string q3;
  std::string navigation;
  std::string driving_question = kDrivingQuestion;
};

PromptBundle compose_prompts(const ScenarioMeta& meta, const std::string& navigation);

// Four-section teacher output; every section must be nonempty.
struct TeacherAnswer {
  std::string scenario;
  std::string key_object;
  std::string plan;
  std::string explanation;

  void validate() const;
};

// One distillation training record.
struct ThinkAnswerRecord {
  std::string clip_id;
  SceneSequence frames;
  std::string navigation;
  std::string question;
  std::string think;
  std::string answer;
  WaypointPlan gt_waypoints;
  bool end_of_instruction = false;

  void validate() const;
};

// Template grammar (bit-exact):
//   <think>...</think>\n<answer>The vehicle should follow: Waypoints: ...</answer>
std::string think_answer_template(const std::string& think, const std::string& answer);
std::string waypoint_answer_sentence(const WaypointPlan& plan);

struct ThinkAnswerSections {
  std::string think;
  std::string answer;
  bool well_formed = false;
};
ThinkAnswerSections split_think_answer(const std::string& text);

// Full serialized reasoning text of a record (what the reasoning head learns).
std::string record_reasoning_text(const ThinkAnswerRecord& record);

// Fills trace.think / trace.answer from trace.text when it matches the grammar.
void populate_trace_sections(ReasoningTrace& trace);

ThinkAnswerRecord assemble_record(const std::string& clip_id, SceneSequence frames,
                                  const std::string& navigation, const TeacherAnswer& teacher,
                                  const WaypointPlan& gt_waypoints, bool end_of_instruction);

// Line-delimited dataset with a version header.
inline constexpr const char* kDatasetFormat = "dsdrive-records";
inline constexpr int kDatasetVersion = 1;

void write_dataset(const std::vector<ThinkAnswerRecord>& records, const std::string& path);
std::vector<ThinkAnswerRecord> read_dataset(const std::string& path);

}  // namespace dsdrive
