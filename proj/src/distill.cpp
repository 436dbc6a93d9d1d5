#include "dsdrive/distill.hpp"

#include <fstream>

#include "dsdrive/errors.hpp"
#include "dsdrive/serde.hpp"

namespace dsdrive {

PromptBundle compose_prompts(const ScenarioMeta& meta, const std::string& navigation) {
  PromptBundle b;
  b.system =
      "You assist a driving system. Look at the scene frames, then answer each question in one "
      "short sentence.";
  b.q1 = "Describe the driving scenario: the weather (" + meta.weather + "), time of day (" +
         meta.time_of_day + "), road type (" + meta.road_type + "), and road conditions.";
  b.q2 =
      "Describe the key item near the ego vehicle: its name, its position, and the potential "
      "risk it poses.";
  b.q3 = "State the driving plan for the scene and explain the decision in plain words.";
  b.navigation = navigation;
  return b;
}

void TeacherAnswer::validate() const {
  std::string missing;
  if (scenario.empty()) missing += " scenario";
  if (key_object.empty()) missing += " key_object";
  if (plan.empty()) missing += " plan";
  if (explanation.empty()) missing += " explanation";
  if (!missing.empty()) throw ValidationError("teacher answer has empty sections:" + missing);
}

std::string think_answer_template(const std::string& think, const std::string& answer) {
  return "<think>" + think + "</think>\n<answer>" + answer + "</answer>";
}

std::string waypoint_answer_sentence(const WaypointPlan& plan) {
  return "The vehicle should follow: Waypoints: " + format_waypoints(plan);
}

ThinkAnswerSections split_think_answer(const std::string& text) {
  ThinkAnswerSections s;
  const std::string think_open = "<think>";
  const std::string think_close = "</think>";
  const std::string answer_open = "<answer>";
  const std::string answer_close = "</answer>";
  const std::size_t t0 = text.find(think_open);
  const std::size_t t1 = text.find(think_close);
  const std::size_t a0 = text.find(answer_open);
  const std::size_t a1 = text.find(answer_close);
  if (t0 == std::string::npos || t1 == std::string::npos || a0 == std::string::npos ||
      a1 == std::string::npos || t0 > t1 || a0 > a1 || t1 > a0) {
    return s;
  }
  s.think = text.substr(t0 + think_open.size(), t1 - t0 - think_open.size());
  s.answer = text.substr(a0 + answer_open.size(), a1 - a0 - answer_open.size());
  s.well_formed = true;
  return s;
}

std::string record_reasoning_text(const ThinkAnswerRecord& record) {
  return think_answer_template(record.think, record.answer);
}

void populate_trace_sections(ReasoningTrace& trace) {
  ThinkAnswerSections s = split_think_answer(trace.text);
  if (s.well_formed) {
    trace.think = std::move(s.think);
    trace.answer = std::move(s.answer);
  }
}

void ThinkAnswerRecord::validate() const {
  std::string problems;
  if (clip_id.empty()) problems += " clip_id empty;";
  try {
    frames.validate();
  } catch (const ValidationError& e) {
    problems += std::string(" frames: ") + e.what() + ";";
  }
  if (question.empty()) problems += " question empty;";
  if (think.empty()) problems += " think empty;";
  try {
    gt_waypoints.validate();
    // answer must embed the ground-truth waypoints verbatim
    const WaypointPlan parsed = parse_waypoints_from_text(answer);
    if (format_waypoints(parsed) != format_waypoints(gt_waypoints)) {
      problems += " answer waypoints differ from gt_waypoints;";
    }
  } catch (const Error& e) {
    problems += std::string(" answer: ") + e.what() + ";";
  }
  if (!problems.empty()) throw ValidationError("invalid record:" + problems);
}

ThinkAnswerRecord assemble_record(const std::string& clip_id, SceneSequence frames,
                                  const std::string& navigation, const TeacherAnswer& teacher,
                                  const WaypointPlan& gt_waypoints, bool end_of_instruction) {
  teacher.validate();
  gt_waypoints.validate();
  ThinkAnswerRecord record;
  record.clip_id = clip_id;
  record.frames = std::move(frames);
  record.navigation = navigation;
  record.question = kDrivingQuestion;
  record.think = teacher.scenario + "\n" + teacher.key_object + "\n" + teacher.plan + "\n" +
                 teacher.explanation;
  record.answer = waypoint_answer_sentence(gt_waypoints);
  record.gt_waypoints = gt_waypoints;
  record.end_of_instruction = end_of_instruction;
  record.validate();
  return record;
}

namespace {

Json record_to_json(const ThinkAnswerRecord& r) {
  Json j;
  j["clip_id"] = r.clip_id;
  j["frames"] = sequence_to_json(r.frames);
  j["navigation"] = r.navigation;
  j["question"] = r.question;
  j["think"] = r.think;
  j["answer"] = r.answer;
  j["gt_waypoints"] = waypoints_to_json(r.gt_waypoints);
  j["end_of_instruction"] = r.end_of_instruction;
  return j;
}

ThinkAnswerRecord record_from_json(const Json& j) {
  ThinkAnswerRecord r;
  r.clip_id = j.at("clip_id").get<std::string>();
  r.frames = sequence_from_json(j.at("frames"));
  r.navigation = j.at("navigation").get<std::string>();
  r.question = j.at("question").get<std::string>();
  r.think = j.at("think").get<std::string>();
  r.answer = j.at("answer").get<std::string>();
  r.gt_waypoints = waypoints_from_json(j.at("gt_waypoints"));
  r.end_of_instruction = j.at("end_of_instruction").get<bool>();
  r.validate();
  return r;
}

}  // namespace

void write_dataset(const std::vector<ThinkAnswerRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  Json header;
  header["format"] = kDatasetFormat;
  header["version"] = kDatasetVersion;
  out << header.dump() << "\n";
  for (const auto& r : records) {
    r.validate();
    out << record_to_json(r).dump() << "\n";
  }
  if (!out) throw IoError("failed writing dataset to " + path);
}

std::vector<ThinkAnswerRecord> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + " is empty, expected a header line");
  Json header;
  try {
    header = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + " line 1: malformed header: " + e.what());
  }
  if (header.value("format", "") != kDatasetFormat) {
    throw IoError(path + ": unexpected format \"" + header.value("format", "") + "\"");
  }
  if (header.value("version", -1) != kDatasetVersion) {
    throw IoError(path + ": unsupported version " + header.value("version", Json()).dump() +
                  ", expected " + std::to_string(kDatasetVersion));
  }
  std::vector<ThinkAnswerRecord> records;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(Json::parse(line)));
    } catch (const std::exception& e) {
      throw IoError(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace dsdrive
