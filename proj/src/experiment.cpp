#include "darht/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <zlib.h>

#include "darht/checkpoint.hpp"
#include "darht/errors.hpp"
#include "darht/eval.hpp"
#include "darht/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace darht {

namespace {

// ---- parsing helpers

void allow_keys(const json& j, const char* where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw FormatError(std::string(where) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw FormatError(std::string("unknown key '") + k + "' in " + where);
  }
}

// A number, or a string fraction such as "8/255".
double number(const json& j, const std::string& what) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    double a = 0.0, b = 0.0;
    char slash = 0;
    std::istringstream in(s);
    if (in >> a >> slash >> b && slash == '/' && in.eof() && b != 0.0) return a / b;
  }
  throw FormatError(what + " must be a number or a fraction like \"8/255\"");
}

template <class T>
void read_number(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = static_cast<T>(number(j.at(key), key));
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

LossKind parse_loss(const std::string& s) {
  if (s == "ce") return LossKind::CrossEntropy;
  if (s == "cw") return LossKind::CwMargin;
  if (s == "kl") return LossKind::KlDivergence;
  throw FormatError("unknown attack loss '" + s + "' (ce, cw, kl)");
}

const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::CrossEntropy: return "ce";
    case LossKind::CwMargin: return "cw";
    case LossKind::KlDivergence: return "kl";
  }
  return "?";
}

AttackConfig parse_attack_config(const json& j, AttackConfig cfg) {
  read_number(j, "epsilon", cfg.epsilon);
  read_number(j, "step_size", cfg.step_size);
  read(j, "steps", cfg.steps);
  read_number(j, "random_start", cfg.random_start);
  if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss").get<std::string>());
  read(j, "query_budget", cfg.query_budget);
  read_number(j, "kappa", cfg.kappa);
  return cfg;
}

json attack_config_json(const AttackConfig& c) {
  return {{"epsilon", c.epsilon}, {"step_size", c.step_size}, {"steps", c.steps}, {"random_start", c.random_start},
          {"loss", loss_name(c.loss)}, {"query_budget", c.query_budget}, {"kappa", c.kappa}};
}

LrSchedule parse_schedule(const json& j) {
  if (j.is_number() || j.is_string()) return LrSchedule::constant(static_cast<float>(number(j, "lr")));
  allow_keys(j, "lr schedule", {"kind", "warmup", "initial", "peak", "warmup_epochs", "decay_epochs", "decay_factor"});
  LrSchedule s;
  const std::string kind = j.value("kind", "warmup-multistep");
  if (kind == "constant") s.kind = LrSchedule::Kind::Constant;
  else if (kind != "warmup-multistep") throw FormatError("unknown lr schedule '" + kind + "'");
  const std::string warm = j.value("warmup", "cosine");
  if (warm == "linear") s.warmup = WarmupShape::Linear;
  else if (warm != "cosine") throw FormatError("unknown warmup shape '" + warm + "'");
  read_number(j, "initial", s.initial_lr);
  read_number(j, "peak", s.peak_lr);
  read(j, "warmup_epochs", s.warmup_epochs);
  read(j, "decay_epochs", s.decay_epochs);
  read_number(j, "decay_factor", s.decay_factor);
  return s;
}

json schedule_json(const LrSchedule& s) {
  if (s.kind == LrSchedule::Kind::Constant) return s.peak_lr;
  return {{"kind", "warmup-multistep"},
          {"warmup", s.warmup == WarmupShape::Cosine ? "cosine" : "linear"},
          {"initial", s.initial_lr},
          {"peak", s.peak_lr},
          {"warmup_epochs", s.warmup_epochs},
          {"decay_epochs", s.decay_epochs},
          {"decay_factor", s.decay_factor}};
}

void read_sgd(const json& j, SgdConfig& sgd) {
  read_number(j, "momentum", sgd.momentum);
  read_number(j, "weight_decay", sgd.weight_decay);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

bool safe_name(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

// ---- output helpers

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path, const char* hint) {
  std::ifstream in(path);
  if (!in) throw UsageError("missing " + path.string() + " (run " + hint + " first)");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError(path.string() + " is not valid JSON");
  return j;
}

std::string rate_or_undefined(const std::optional<double>& r) {
  if (!r) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *r);
  return buf;
}

std::uint32_t crc_string(const std::string& s) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

// ---- shared state of a run

struct Run {
  const ExperimentConfig& cfg;
  std::ostream& log;
  fs::path out;
  PreparedData data;
  std::vector<fs::path> artifacts;

  void add(const fs::path& rel) {
    if (std::find(artifacts.begin(), artifacts.end(), rel) == artifacts.end()) artifacts.push_back(rel);
  }
  fs::path teacher_path(std::size_t j) const {
    const auto& t = cfg.teachers[j];
    return t.checkpoint ? *t.checkpoint : out / "teachers" / (t.name + ".ckpt");
  }
  InferenceMode student_mode() const { return {cfg.student.distill.eval_mc_passes, cfg.student.eval_seed}; }
};

Model load_checked(const fs::path& path, const char* hint, const Shape& shape, std::size_t k) {
  if (!fs::exists(path)) throw UsageError("missing checkpoint " + path.string() + " (run " + hint + " first)");
  Model m = load_checkpoint(path);
  if (m.classes() != k || m.spec().input_shape != shape)
    throw ValidationError("checkpoint " + path.string() + " does not match the data (K or input shape)");
  return m;
}

TeacherEnsemble load_teachers(const Run& run) {
  std::vector<Model> models;
  std::vector<TeacherInfo> info;
  const Shape shape = run.data.train.example_shape();
  for (std::size_t j = 0; j < run.cfg.teachers.size(); ++j) {
    const auto& t = run.cfg.teachers[j];
    models.push_back(load_checked(run.teacher_path(j), "train-teachers", shape, run.data.train.classes));
    info.push_back({models.back().spec().name, t.train.algorithm, t.train.tau});
  }
  return TeacherEnsemble(std::move(models), std::move(info));
}

void train_teachers(Run& run) {
  const Shape shape = run.data.train.example_shape();
  for (std::size_t j = 0; j < run.cfg.teachers.size(); ++j) {
    const auto& t = run.cfg.teachers[j];
    if (t.checkpoint) {
      run.log << "teacher " << t.name << ": using " << t.checkpoint->string() << "\n";
      continue;
    }
    run.log << "teacher " << t.name << ": " << t.architecture << " / " << to_string(t.train.algorithm) << ", "
            << t.train.epochs << " epochs\n";
    Model m = Model::build(architecture(t.architecture, shape, run.data.train.classes), t.init_seed);
    const auto log = train_teacher(m, t.train, run.data.train);
    const fs::path ckpt = fs::path("teachers") / (t.name + ".ckpt");
    const fs::path csv = fs::path("teachers") / (t.name + ".csv");
    fs::create_directories(run.out / "teachers");
    save_checkpoint(m, run.out / ckpt);
    std::ostringstream rows;
    write_epoch_csv(rows, log);
    write_text(run.out / csv, rows.str());
    run.add(ckpt);
    run.add(csv);
  }
}

void distill(Run& run) {
  const TeacherEnsemble ens = load_teachers(run);
  const auto& s = run.cfg.student;
  const std::size_t k = run.data.train.classes;
  Model student = Model::build(
      architecture(s.architecture, run.data.train.example_shape(), k, StudentHeadSpec{k, ens.size(), s.dropout}),
      s.init_seed);
  run.log << "student: " << s.architecture << " distilled from " << ens.size() << " teachers, "
          << s.distill.epochs << " epochs\n";
  std::vector<std::size_t> head(std::min(s.distill.log_examples, run.data.test.size()));
  std::iota(head.begin(), head.end(), 0);
  const Dataset monitor = run.data.test.subset(head);
  const auto log = darht_train(student, ens, run.data.train, s.distill, head.empty() ? nullptr : &monitor);
  if (!ens.unchanged()) throw std::logic_error("teacher parameters changed during distillation");
  save_checkpoint(student, run.out / "student.ckpt");
  std::ostringstream rows;
  write_distill_csv(rows, log);
  write_text(run.out / "distill.csv", rows.str());
  run.add("student.ckpt");
  run.add("distill.csv");
}

MetricsReport evaluate_model(const Run& run, const Model& m, InferenceMode mode) {
  MetricsReport r;
  r.clean = clean_accuracy(m, run.data.test, mode);
  for (const auto& a : run.cfg.attacks) {
    const AttackEval e = evaluate_attack(m, run.data.test, a.kind, a.config, mode);
    r.add_attack(a.name, e.clean, e.robust);
  }
  return r;
}

void attack_eval(Run& run) {
  const TeacherEnsemble ens = load_teachers(run);
  const Model student =
      load_checked(run.out / "student.ckpt", "distill", run.data.train.example_shape(), run.data.train.classes);
  auto emit = [&](const std::string& name, const Model& m, InferenceMode mode) {
    run.log << "attack-eval " << name << "\n";
    const MetricsReport r = evaluate_model(run, m, mode);
    r.validate();
    std::ostringstream csv;
    write_metrics_csv(csv, r);
    const fs::path base = fs::path("metrics") / name;
    write_text(run.out / (base.string() + ".csv"), csv.str());
    write_text(run.out / (base.string() + ".json"), r.to_json().dump(2) + "\n");
    run.add(base.string() + ".csv");
    run.add(base.string() + ".json");
  };
  emit("student", student, run.student_mode());
  for (std::size_t j = 0; j < ens.size(); ++j) emit(run.cfg.teachers[j].name, ens.teacher(j), {});
}

AttackConfig transfer_attack(const ExperimentConfig& cfg) {
  for (const auto& a : cfg.attacks)
    if (a.kind == AttackKind::Pgd) return a.config;
  AttackConfig c;
  c.seed = derive_seed(cfg.seed, 5);
  return c;
}

void transfer_eval(Run& run) {
  const TeacherEnsemble ens = load_teachers(run);
  const Model student =
      load_checked(run.out / "student.ckpt", "distill", run.data.train.example_shape(), run.data.train.classes);
  run.log << "transfer-eval: PGD on the student against " << ens.size() << " teachers\n";
  const AttackEval e = evaluate_attack(student, run.data.test, AttackKind::Pgd, transfer_attack(run.cfg),
                                       run.student_mode());
  std::vector<ContingencyTable> tables;
  std::ostringstream csv;
  csv << "teacher,both_correct,student_correct_teacher_wrong,student_wrong_teacher_correct,both_wrong,"
         "transferability,recovery\n";
  json j;
  j["teachers"] = json::array();
  std::vector<double> defined;
  for (std::size_t t = 0; t < ens.size(); ++t) {
    const ContingencyTable c =
        contingency(student, run.student_mode(), ens.teacher(t), e.x_adv, run.data.test.labels);
    tables.push_back(c);
    std::optional<double> tr, rec;
    if (c.student_wrong() > 0) tr = static_cast<double>(c.both_wrong) / static_cast<double>(c.student_wrong());
    if (c.teacher_wrong() > 0) rec = recovery_rate(c);
    if (tr) defined.push_back(*tr);
    csv << run.cfg.teachers[t].name << ',' << c.both_correct << ',' << c.student_correct_teacher_wrong << ','
        << c.student_wrong_teacher_correct << ',' << c.both_wrong << ',' << rate_or_undefined(tr) << ','
        << rate_or_undefined(rec) << '\n';
    json tj{{"name", run.cfg.teachers[t].name},
            {"both_correct", c.both_correct},
            {"student_correct_teacher_wrong", c.student_correct_teacher_wrong},
            {"student_wrong_teacher_correct", c.student_wrong_teacher_correct},
            {"both_wrong", c.both_wrong}};
    tj["transferability"] = tr ? json(*tr) : json(nullptr);
    tj["recovery"] = rec ? json(*rec) : json(nullptr);
    j["teachers"].push_back(tj);
  }
  std::optional<double> mean;
  if (defined.size() == tables.size()) mean = transferability_rate(tables).mean;
  csv << "mean,,,,," << rate_or_undefined(mean) << ",\n";
  j["mean_transferability"] = mean ? json(*mean) : json(nullptr);
  j["examples"] = run.data.test.size();
  write_text(run.out / "transfer.csv", csv.str());
  write_text(run.out / "transfer.json", j.dump(2) + "\n");
  run.add("transfer.csv");
  run.add("transfer.json");
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.clean = j.at("clean").get<double>();
  for (const auto& a : j.at("attacks"))
    r.attacks.push_back({a.at("attack").get<std::string>(), a.at("clean").get<double>(), a.at("robust").get<double>(),
                         a.at("w_robust").get<double>()});
  return r;
}

void report(Run& run) {
  std::vector<std::string> names{"student"};
  for (const auto& t : run.cfg.teachers) names.push_back(t.name);
  const json transfer = read_json(run.out / "transfer.json", "transfer-eval");

  std::ostringstream csv;
  csv << "model,attack,clean,robust,w_robust\n";
  json out;
  out["models"] = json::object();
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %-8s %8s %8s %8s\n", "model", "attack", "clean", "robust", "w_robust");
  run.log << line;
  for (const auto& name : names) {
    MetricsReport r = report_from_json(read_json(run.out / "metrics" / (name + ".json"), "attack-eval"));
    if (name == "student") {
      for (const auto& t : transfer.at("teachers")) {
        if (!t.at("transferability").is_null()) r.transferability.push_back(t["transferability"].get<double>());
        if (!t.at("recovery").is_null()) r.recovery.push_back(t["recovery"].get<double>());
      }
      if (!transfer.at("mean_transferability").is_null())
        r.ensemble_transferability = transfer["mean_transferability"].get<double>();
    }
    // Recompute W-Robust from the row itself so the column is consistent by
    // construction, then check nothing drifted.
    for (auto& a : r.attacks) {
      const double w = w_robust(a.clean, a.robust);
      if (std::abs(w - a.w_robust) > 1e-12) throw ValidationError("W-Robust of " + name + "/" + a.attack + " is stale");
      a.w_robust = w;
    }
    r.validate();
    for (const auto& a : r.attacks) {
      csv << name << ',' << a.attack << ',' << percent(a.clean) << ',' << percent(a.robust) << ','
          << percent(a.w_robust) << '\n';
      std::snprintf(line, sizeof line, "%-14s %-8s %8s %8s %8s\n", name.c_str(), a.attack.c_str(),
                    percent(a.clean).c_str(), percent(a.robust).c_str(), percent(a.w_robust).c_str());
      run.log << line;
    }
    out["models"][name] = r.to_json();
  }
  out["transfer"] = transfer;
  if (!transfer.at("mean_transferability").is_null())
    run.log << "mean student->teacher transferability: " << percent(transfer["mean_transferability"].get<double>())
            << "%\n";
  write_text(run.out / "report.csv", csv.str());
  write_text(run.out / "report.json", out.dump(2) + "\n");
  run.add("report.csv");
  run.add("report.json");
}

json seeds_json(const ExperimentConfig& cfg) {
  json s;
  s["master"] = cfg.seed;
  s["data"] = cfg.data.synthetic.seed;
  s["split"] = cfg.data.split_seed;
  s["teachers"] = json::array();
  for (const auto& t : cfg.teachers) s["teachers"].push_back({{"init", t.init_seed}, {"train", t.train.seed}});
  s["student"] = {{"init", cfg.student.init_seed},
                  {"distill", cfg.student.distill.seed},
                  {"eval", cfg.student.eval_seed}};
  s["attacks"] = json::array();
  for (const auto& a : cfg.attacks) s["attacks"].push_back(a.config.seed);
  return s;
}

}  // namespace

// ---- config

ExperimentConfig ExperimentConfig::from_json(const json& j, const fs::path& base_dir) {
  try {
    allow_keys(j, "config", {"seed", "output", "data", "teachers", "student", "attacks"});
    ExperimentConfig c;
    read(j, "seed", c.seed);
    if (j.contains("output")) c.output = resolve(base_dir, j["output"].get<std::string>());

    if (!j.contains("data")) throw FormatError("config has no data section");
    const json& d = j["data"];
    allow_keys(d, "data", {"kind", "classes", "count", "dims", "noise", "separation", "weak_shift", "test_fraction",
                           "example_shape", "images", "labels"});
    read(d, "kind", c.data.kind);
    if (c.data.kind == "idx") {
      if (!d.contains("images") || !d.contains("labels")) throw FormatError("idx data needs images and labels paths");
      c.data.idx_images = resolve(base_dir, d["images"].get<std::string>());
      c.data.idx_labels = resolve(base_dir, d["labels"].get<std::string>());
    } else {
      c.data.synthetic.kind = parse_synthetic_kind(c.data.kind);
    }
    read(d, "classes", c.data.synthetic.classes);
    read(d, "count", c.data.synthetic.count);
    read(d, "dims", c.data.synthetic.dims);
    read_number(d, "noise", c.data.synthetic.noise);
    read_number(d, "separation", c.data.synthetic.separation);
    read_number(d, "weak_shift", c.data.synthetic.weak_shift);
    read_number(d, "test_fraction", c.data.test_fraction);
    if (d.contains("example_shape")) c.data.example_shape = d["example_shape"].get<Shape>();

    if (!j.contains("teachers") || !j["teachers"].is_array() || j["teachers"].empty())
      throw FormatError("config needs a non-empty teachers list");
    for (const auto& tj : j["teachers"]) {
      allow_keys(tj, "teacher", {"name", "architecture", "algorithm", "tau", "beta", "epochs", "batch_size", "lr",
                                 "momentum", "weight_decay", "attack", "checkpoint"});
      TeacherSection t;
      if (!tj.contains("name")) throw FormatError("every teacher needs a name");
      t.name = tj["name"].get<std::string>();
      read(tj, "architecture", t.architecture);
      if (tj.contains("algorithm")) t.train.algorithm = parse_train_algorithm(tj["algorithm"].get<std::string>());
      read(tj, "tau", t.train.tau);
      read_number(tj, "beta", t.train.beta);
      read(tj, "epochs", t.train.epochs);
      read(tj, "batch_size", t.train.batch_size);
      if (tj.contains("lr")) t.train.schedule = parse_schedule(tj["lr"]);
      read_sgd(tj, t.train.sgd);
      if (tj.contains("attack")) t.train.attack = parse_attack_config(tj["attack"], t.train.attack);
      if (tj.contains("checkpoint")) t.checkpoint = resolve(base_dir, tj["checkpoint"].get<std::string>());
      c.teachers.push_back(std::move(t));
    }

    if (j.contains("student")) {
      const json& sj = j["student"];
      allow_keys(sj, "student", {"architecture", "dropout", "epochs", "mc_passes", "adversarial_probability", "inner",
                                 "tau", "lr", "momentum", "weight_decay", "batch_size", "log_examples",
                                 "eval_mc_passes", "attack"});
      auto& s = c.student;
      read(sj, "architecture", s.architecture);
      read_number(sj, "dropout", s.dropout);
      read(sj, "epochs", s.distill.epochs);
      read(sj, "mc_passes", s.distill.mc_passes);
      read_number(sj, "adversarial_probability", s.distill.adversarial_probability);
      if (sj.contains("inner")) {
        const std::string inner = sj["inner"].get<std::string>();
        if (inner == "fat") s.distill.inner = InnerAttack::Fat;
        else if (inner == "pgd") s.distill.inner = InnerAttack::Pgd;
        else throw FormatError("unknown inner attack '" + inner + "' (fat, pgd)");
      }
      read(sj, "tau", s.distill.tau);
      if (sj.contains("lr")) s.distill.schedule = parse_schedule(sj["lr"]);
      read_sgd(sj, s.distill.sgd);
      read(sj, "batch_size", s.distill.batch_size);
      read(sj, "log_examples", s.distill.log_examples);
      read(sj, "eval_mc_passes", s.distill.eval_mc_passes);
      if (sj.contains("attack")) s.distill.attack = parse_attack_config(sj["attack"], s.distill.attack);
    }

    if (j.contains("attacks")) {
      for (const auto& aj : j["attacks"]) {
        allow_keys(aj, "attack", {"name", "kind", "epsilon", "step_size", "steps", "random_start", "loss",
                                  "query_budget", "kappa"});
        AttackSection a;
        if (!aj.contains("kind")) throw FormatError("every attack needs a kind");
        a.kind = parse_attack_kind(aj["kind"].get<std::string>());
        if (a.kind == AttackKind::CwInf) a.config.loss = LossKind::CwMargin;
        if (a.kind == AttackKind::Square) a.config.query_budget = 1000;
        a.config = parse_attack_config(aj, a.config);
        a.name = aj.value("name", to_string(a.kind));
        c.attacks.push_back(std::move(a));
      }
    }
    c.apply_seed();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed config: ") + e.what());
  } catch (const UsageError& e) {
    // parse_* helpers report unknown names as usage errors
    throw FormatError(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw FormatError("config file " + path.string() + " is not valid JSON");
  return from_json(j, path.parent_path());
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["output"] = output.string();
  json d{{"kind", data.kind}, {"test_fraction", data.test_fraction}};
  if (data.kind == "idx") {
    d["images"] = data.idx_images.string();
    d["labels"] = data.idx_labels.string();
  } else {
    const auto& s = data.synthetic;
    d.update({{"classes", s.classes}, {"count", s.count}, {"dims", s.dims}, {"noise", s.noise},
              {"separation", s.separation}, {"weak_shift", s.weak_shift}});
  }
  if (data.example_shape) d["example_shape"] = *data.example_shape;
  j["data"] = d;
  j["teachers"] = json::array();
  for (const auto& t : teachers) {
    json tj{{"name", t.name}, {"algorithm", to_string(t.train.algorithm)}};
    if (t.checkpoint) {
      tj["checkpoint"] = t.checkpoint->string();
    } else {
      tj.update({{"architecture", t.architecture}, {"tau", t.train.tau}, {"beta", t.train.beta},
                 {"epochs", t.train.epochs}, {"batch_size", t.train.batch_size},
                 {"lr", schedule_json(t.train.schedule)}, {"momentum", t.train.sgd.momentum},
                 {"weight_decay", t.train.sgd.weight_decay}, {"attack", attack_config_json(t.train.attack)}});
    }
    j["teachers"].push_back(tj);
  }
  const auto& s = student;
  j["student"] = {{"architecture", s.architecture},
                  {"dropout", s.dropout},
                  {"epochs", s.distill.epochs},
                  {"mc_passes", s.distill.mc_passes},
                  {"adversarial_probability", s.distill.adversarial_probability},
                  {"inner", s.distill.inner == InnerAttack::Fat ? "fat" : "pgd"},
                  {"tau", s.distill.tau},
                  {"lr", schedule_json(s.distill.schedule)},
                  {"momentum", s.distill.sgd.momentum},
                  {"weight_decay", s.distill.sgd.weight_decay},
                  {"batch_size", s.distill.batch_size},
                  {"log_examples", s.distill.log_examples},
                  {"eval_mc_passes", s.distill.eval_mc_passes},
                  {"attack", attack_config_json(s.distill.attack)}};
  j["attacks"] = json::array();
  for (const auto& a : attacks) {
    json aj = attack_config_json(a.config);
    aj["name"] = a.name;
    aj["kind"] = to_string(a.kind);
    j["attacks"].push_back(aj);
  }
  return j;
}

std::string ExperimentConfig::hash() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", crc_string(to_json().dump()));
  return buf;
}

void ExperimentConfig::apply_seed() {
  data.synthetic.seed = derive_seed(seed, 0);
  data.split_seed = derive_seed(seed, 1);
  student.init_seed = derive_seed(seed, 2);
  student.distill.seed = derive_seed(seed, 3);
  student.eval_seed = derive_seed(seed, 4);
  for (std::size_t j = 0; j < teachers.size(); ++j) {
    teachers[j].train.seed = derive_seed(seed, 100 + j);
    teachers[j].init_seed = derive_seed(seed, 200 + j);
  }
  for (std::size_t i = 0; i < attacks.size(); ++i) attacks[i].config.seed = derive_seed(seed, 300 + i);
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  Dataset full;
  if (cfg.data.kind == "idx") {
    full = load_idx(cfg.data.idx_images, cfg.data.idx_labels);
  } else {
    full = generate_synthetic(cfg.data.synthetic);
  }
  if (cfg.data.example_shape) full = full.with_example_shape(*cfg.data.example_shape);
  auto split = train_test_split(full, cfg.data.test_fraction, cfg.data.split_seed);
  return {std::move(split.train), std::move(split.test)};
}

void validate_experiment(const ExperimentConfig& cfg, const PreparedData& data) {
  const std::size_t k = data.train.classes;
  const Shape shape = data.train.example_shape();
  if (cfg.teachers.empty()) throw ValidationError("an experiment needs at least one teacher");
  std::set<std::string> names{"student"};
  std::vector<std::size_t> ks;
  for (const auto& t : cfg.teachers) {
    if (!safe_name(t.name)) throw ValidationError("teacher name '" + t.name + "' must be [A-Za-z0-9_-]+");
    if (!names.insert(t.name).second) throw ValidationError("duplicate model name '" + t.name + "'");
    if (t.checkpoint) {
      if (!fs::exists(*t.checkpoint))
        throw ValidationError("teacher " + t.name + ": checkpoint " + t.checkpoint->string() + " does not exist");
      const Model m = load_checkpoint(*t.checkpoint);
      if (m.spec().input_shape != shape)
        throw ValidationError("teacher " + t.name + " expects input " + shape_str(m.spec().input_shape) +
                              " but the data has " + shape_str(shape));
      ks.push_back(m.classes());
    } else {
      try {
        ks.push_back(Model::build(architecture(t.architecture, shape, k), 0).classes());
        t.train.validate();
      } catch (const std::invalid_argument& e) {
        throw ValidationError("teacher " + t.name + ": " + e.what());
      }
    }
  }
  for (std::size_t j = 0; j < ks.size(); ++j)
    if (ks[j] != k)
      throw ValidationError("teacher " + cfg.teachers[j].name + " has K=" + std::to_string(ks[j]) +
                            " but the data and student have K=" + std::to_string(k));
  try {
    architecture(cfg.student.architecture, shape, k, StudentHeadSpec{k, cfg.teachers.size(), cfg.student.dropout});
    cfg.student.distill.validate();
    for (const auto& a : cfg.attacks) {
      a.config.validate();
      if (!safe_name(a.name)) throw ValidationError("attack name '" + a.name + "' must be [A-Za-z0-9_-]+");
    }
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("student or attack settings: ") + e.what());
  }
  std::set<std::string> attack_names;
  for (const auto& a : cfg.attacks)
    if (!attack_names.insert(a.name).second) throw ValidationError("duplicate attack name '" + a.name + "'");
}

std::string to_string(Subcommand s) {
  switch (s) {
    case Subcommand::TrainTeachers: return "train-teachers";
    case Subcommand::Distill: return "distill";
    case Subcommand::AttackEval: return "attack-eval";
    case Subcommand::TransferEval: return "transfer-eval";
    case Subcommand::Report: return "report";
    case Subcommand::Pipeline: return "pipeline";
  }
  return "?";
}

Subcommand parse_subcommand(const std::string& name) {
  for (auto s : {Subcommand::TrainTeachers, Subcommand::Distill, Subcommand::AttackEval, Subcommand::TransferEval,
                 Subcommand::Report, Subcommand::Pipeline})
    if (to_string(s) == name) return s;
  throw UsageError("unknown subcommand '" + name + "'");
}

RunResult run_experiment(const ExperimentConfig& cfg, Subcommand sub, std::ostream& log,
                         const std::string& config_path) {
  Run run{cfg, log, cfg.output, prepare_data(cfg), {}};
  validate_experiment(cfg, run.data);
  fs::create_directories(run.out);

  switch (sub) {
    case Subcommand::TrainTeachers: train_teachers(run); break;
    case Subcommand::Distill: distill(run); break;
    case Subcommand::AttackEval: attack_eval(run); break;
    case Subcommand::TransferEval: transfer_eval(run); break;
    case Subcommand::Report: report(run); break;
    case Subcommand::Pipeline:
      train_teachers(run);
      distill(run);
      attack_eval(run);
      transfer_eval(run);
      report(run);
      break;
  }

  json manifest;
  manifest["subcommand"] = to_string(sub);
  manifest["config_path"] = config_path;
  manifest["config_hash"] = cfg.hash();
  manifest["config"] = cfg.to_json();
  manifest["seeds"] = seeds_json(cfg);
  manifest["artifacts"] = json::array();
  for (const auto& a : run.artifacts) manifest["artifacts"].push_back(a.generic_string());
  RunResult result{run.artifacts, fs::path("manifest-" + to_string(sub) + ".json")};
  write_text(run.out / result.manifest, manifest.dump(2) + "\n");
  return result;
}

}  // namespace darht
