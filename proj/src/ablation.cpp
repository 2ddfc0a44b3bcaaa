#include "duet/ablation.hpp"

#include <cmath>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace duet {

namespace {

std::string num(double v) { return std::isfinite(v) ? format_double(v) : "na"; }

AblationRow parse_row(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string p;
  while (std::getline(ss, p, ':')) parts.push_back(p);
  if (parts.size() != 4 || (parts[1] != "freeze" && parts[1] != "joint"))
    throw std::invalid_argument("ablation row '" + text + "': expected name:freeze|joint:r:s");
  AblationRow r;
  r.name = parts[0];
  r.freeze_understanding = parts[1] == "freeze";
  r.understanding = std::stoul(parts[2]);
  r.generation = std::stoul(parts[3]);
  if (r.freeze_understanding && r.understanding != 0)
    throw std::invalid_argument("ablation row '" + text + "': a frozen understanding branch takes no understanding samples");
  return r;
}

}  // namespace

std::vector<AblationRow> default_ablation_rows() {
  return {{"frozen_0_1", true, 0, 1},
          {"joint_1_1", false, 1, 1},
          {"joint_1_2", false, 1, 2},
          {"joint_1_4", false, 1, 4},
          {"joint_0_1", false, 0, 1}};
}

AblationGrid ablation_grid_from_kv(const std::map<std::string, std::string>& kv) {
  AblationGrid g;
  std::map<std::string, std::string> stage;
  for (const char* k : {"learning_rate", "warmup_steps", "batch_size", "use_repa", "repa_weight"})
    if (kv.count(k)) stage[k] = kv.at(k);
  stage["stage"] = "2";
  g.base = stage_config_from_kv(stage);
  if (kv.count("steps")) g.steps = std::stoul(kv.at("steps"));
  if (kv.count("seed")) g.seed = std::stoull(kv.at("seed"));
  if (kv.count("eval.max_samples")) g.eval.max_samples = std::stoul(kv.at("eval.max_samples"));
  if (kv.count("eval.sample_steps")) g.eval.sample_steps = std::stoul(kv.at("eval.sample_steps"));
  if (kv.count("rows")) {
    g.rows.clear();
    std::stringstream ss(kv.at("rows"));
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) g.rows.push_back(parse_row(item));
  }
  if (g.rows.empty()) throw std::invalid_argument("ablation grid has no rows");
  if (g.steps == 0) throw std::invalid_argument("ablation steps must be at least 1");
  return g;
}

KeyValues ablation_grid_to_kv(const AblationGrid& g) {
  std::string rows;
  for (const auto& r : g.rows) {
    if (!rows.empty()) rows += ",";
    rows += r.name + ":" + (r.freeze_understanding ? "freeze" : "joint") + ":" + std::to_string(r.understanding) + ":" +
            std::to_string(r.generation);
  }
  return {{"steps", std::to_string(g.steps)},
          {"seed", std::to_string(g.seed)},
          {"learning_rate", format_double(g.base.learning_rate)},
          {"warmup_steps", std::to_string(g.base.warmup_steps)},
          {"batch_size", std::to_string(g.base.batch_size)},
          {"use_repa", g.base.use_repa ? "true" : "false"},
          {"repa_weight", format_double(g.base.repa_weight)},
          {"rows", rows},
          {"eval.max_samples", std::to_string(g.eval.max_samples)},
          {"eval.sample_steps", std::to_string(g.eval.sample_steps)}};
}

AblationOutcome run_ablation(const AblationGrid& grid, const Model& start, const Corpus& corpus,
                             const std::filesystem::path& out_dir, std::ostream* log) {
  if (start.meta.count("generation.inherited") == 0 || start.meta.at("generation.inherited") != "1")
    throw std::runtime_error("ablation starts from a stage-2 checkpoint (generation branch not trained yet)");
  AblationOutcome out;
  EvalOptions eval = grid.eval;
  eval.seed = grid.seed;
  eval.log = log;
  out.before = evaluate(start, corpus, eval);
  if (log) *log << "ablation: before micro-F1 " << out.before.f1_negative.micro << std::endl;
  for (const auto& row : grid.rows) {
    Model m = start;
    m.params = start.params.clone();
    StageConfig cfg = grid.base;
    cfg.total_steps = grid.steps;
    cfg.freeze = row.freeze_understanding ? std::set<Branch>{Branch::understanding} : std::set<Branch>{};
    cfg.mix_understanding = row.understanding;
    cfg.mix_generation = row.generation;
    StageOptions so;
    so.seed = grid.seed;
    so.out_dir = out_dir;
    so.name = "ablation_" + row.name;
    so.log = log;
    so.repa_monitor_samples = 0;
    const StageResult sr = run_stage(cfg, m, corpus, so);
    AblationResult res;
    res.row = row;
    res.final_loss = sr.losses.back();
    res.metrics = evaluate(m, corpus, eval);
    if (log)
      *log << "ablation " << row.name << ": micro-F1 " << res.metrics.f1_negative.micro << ", FD " << res.metrics.fd
           << std::endl;
    out.rows.push_back(std::move(res));
  }
  return out;
}

std::string ablation_table(const AblationOutcome& o) {
  std::ostringstream s;
  s << "row\tunderstanding\tratio\tmicro_f1\tmacro_f1\tfd\tkd\n";
  auto line = [&](const std::string& name, const std::string& und, const std::string& ratio, const MetricReport& m) {
    s << name << '\t' << und << '\t' << ratio << '\t' << num(m.f1_negative.micro) << '\t' << num(m.f1_negative.macro) << '\t'
      << num(m.fd) << '\t' << num(m.kd) << '\n';
  };
  line("before", "-", "-", o.before);
  for (const auto& r : o.rows)
    line(r.row.name, r.row.freeze_understanding ? "frozen" : "trainable",
         std::to_string(r.row.understanding) + ":" + std::to_string(r.row.generation), r.metrics);
  return s.str();
}

}  // namespace duet
