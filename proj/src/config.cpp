#include "jepkd/config.hpp"

#include <openssl/evp.h>

#include <fstream>
#include <set>

#include "jepkd/feature_io.hpp"

namespace jepkd {

namespace {

using nlohmann::json;

// Reads j[key] into out if present; rejects keys not in `allowed`.
class Section {
 public:
  Section(const json& j, std::string name, std::set<std::string> allowed) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
    for (const auto& [k, _] : j_.items()) {
      if (!allowed.count(k)) throw ConfigError("config: unknown key '" + k + "' in " + name_);
    }
  }

  template <typename T>
  void get(const char* key, T& out) const {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + name_ + "." + key + "' has the wrong type");
    }
  }

 private:
  const json& j_;
  std::string name_;
};

json corpus_json(const CorpusSpec& c) {
  return {{"train", c.train_count}, {"val", c.val_count},   {"test", c.test_count},
          {"min_len", c.min_len},   {"max_len", c.max_len}, {"kappa", c.kappa},
          {"vocab_size", c.vocab_size}};
}

json model_json(const QuartetConfig& m) {
  return {{"feature_dim", m.feature_dim},
          {"encoder_layers", m.encoder_layers},
          {"decoder_layers", m.decoder_layers},
          {"generator_blocks", m.generator_blocks},
          {"attention_heads", m.attention_heads},
          {"ff_dim", m.ff_dim},
          {"max_len", m.max_len},
          {"z_dim", m.z_dim},
          {"frontend_kernel", m.frontend_kernel},
          {"disc_kernel", m.disc_kernel},
          {"dropout", m.dropout}};
}

json schedule_json(const StageSchedule& s) {
  return {{"stage1_epochs", s.epochs[0]},
          {"stage2_epochs", s.epochs[1]},
          {"stage3_epochs", s.epochs[2]},
          {"lambda", s.weights.lambda},
          {"gamma", s.weights.gamma},
          {"d_steps_per_g_step", s.d_steps_per_g_step},
          {"batch_size", s.batch_size},
          {"rewarm_per_stage", s.rewarm_per_stage},
          {"label_smoothing", s.label_smoothing}};
}

json optim_json(const OptimConfig& o) {
  return {{"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps},
          {"max_lr", o.max_lr},
          {"warmup_steps", o.warmup_steps}};
}

ConfigHash sha256(const std::string& text) {
  ConfigHash h{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), h.data(), &len, EVP_sha256(), nullptr) != 1 || len != h.size()) {
    throw std::runtime_error("SHA-256 failed");
  }
  return h;
}

}  // namespace

json config_to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"mode", std::string(mode_name(c.mode))},
          {"out_dir", c.out_dir},
          {"corpus", corpus_json(c.corpus)},
          {"model", model_json(c.model)},
          {"schedule", schedule_json(c.schedule)},
          {"optim", optim_json(c.optim)}};
}

RunConfig config_from_json(const json& j, RunConfig c) {
  Section top(j, "config", {"seed", "mode", "out_dir", "corpus", "model", "schedule", "optim"});
  top.get("seed", c.seed);
  top.get("out_dir", c.out_dir);
  if (auto it = j.find("mode"); it != j.end()) {
    try {
      c.mode = mode_from_name(it->get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  }
  if (auto it = j.find("corpus"); it != j.end()) {
    Section s(*it, "corpus", {"train", "val", "test", "min_len", "max_len", "kappa", "vocab_size"});
    s.get("train", c.corpus.train_count);
    s.get("val", c.corpus.val_count);
    s.get("test", c.corpus.test_count);
    s.get("min_len", c.corpus.min_len);
    s.get("max_len", c.corpus.max_len);
    s.get("kappa", c.corpus.kappa);
    s.get("vocab_size", c.corpus.vocab_size);
  }
  if (auto it = j.find("model"); it != j.end()) {
    Section s(*it, "model",
              {"feature_dim", "encoder_layers", "decoder_layers", "generator_blocks", "attention_heads", "ff_dim",
               "max_len", "z_dim", "frontend_kernel", "disc_kernel", "dropout"});
    s.get("feature_dim", c.model.feature_dim);
    s.get("encoder_layers", c.model.encoder_layers);
    s.get("decoder_layers", c.model.decoder_layers);
    s.get("generator_blocks", c.model.generator_blocks);
    s.get("attention_heads", c.model.attention_heads);
    s.get("ff_dim", c.model.ff_dim);
    s.get("max_len", c.model.max_len);
    s.get("z_dim", c.model.z_dim);
    s.get("frontend_kernel", c.model.frontend_kernel);
    s.get("disc_kernel", c.model.disc_kernel);
    s.get("dropout", c.model.dropout);
  }
  if (auto it = j.find("schedule"); it != j.end()) {
    Section s(*it, "schedule",
              {"stage1_epochs", "stage2_epochs", "stage3_epochs", "lambda", "gamma", "d_steps_per_g_step",
               "batch_size", "rewarm_per_stage", "label_smoothing"});
    s.get("stage1_epochs", c.schedule.epochs[0]);
    s.get("stage2_epochs", c.schedule.epochs[1]);
    s.get("stage3_epochs", c.schedule.epochs[2]);
    s.get("lambda", c.schedule.weights.lambda);
    s.get("gamma", c.schedule.weights.gamma);
    s.get("d_steps_per_g_step", c.schedule.d_steps_per_g_step);
    s.get("batch_size", c.schedule.batch_size);
    s.get("rewarm_per_stage", c.schedule.rewarm_per_stage);
    s.get("label_smoothing", c.schedule.label_smoothing);
  }
  if (auto it = j.find("optim"); it != j.end()) {
    Section s(*it, "optim", {"beta1", "beta2", "eps", "max_lr", "warmup_steps"});
    s.get("beta1", c.optim.beta1);
    s.get("beta2", c.optim.beta2);
    s.get("eps", c.optim.eps);
    s.get("max_lr", c.optim.max_lr);
    s.get("warmup_steps", c.optim.warmup_steps);
  }
  try {
    c.schedule.weights.validate();
    model_config(c).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.corpus.min_len == 0 || c.corpus.min_len > c.corpus.max_len) throw ConfigError("config: bad length range");
  if (c.corpus.max_len > c.model.max_len) throw ConfigError("config: corpus.max_len exceeds model.max_len");
  if (!(c.corpus.kappa > 0.0)) throw ConfigError("config: kappa must be positive");
  if (c.schedule.batch_size == 0) throw ConfigError("config: batch_size must be positive");
  if (c.schedule.d_steps_per_g_step == 0) throw ConfigError("config: d_steps_per_g_step must be positive");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

ConfigHash config_hash(const RunConfig& c) {
  const json j = {{"seed", c.seed},
                  {"corpus", corpus_json(c.corpus)},
                  {"model", model_json(c.model)},
                  {"schedule", schedule_json(c.schedule)},
                  {"optim", optim_json(c.optim)}};
  return sha256(j.dump());
}

ConfigHash data_hash(const RunConfig& c) {
  const json j = {{"seed", c.seed}, {"corpus", corpus_json(c.corpus)}, {"model", model_json(c.model)}};
  return sha256(j.dump());
}

SeedStreams fan_out(std::uint64_t master) {
  SeedStreams s{};
  s.corpus = derive_seed(master, "corpus");
  s.lm = derive_seed(master, "lm");
  s.teacher = derive_seed(master, "teacher");
  s.init = derive_seed(master, "init");
  s.noise = derive_seed(master, "noise-z");
  s.shuffle = derive_seed(master, "shuffle");
  s.dropout = derive_seed(master, "dropout");
  s.eval = derive_seed(master, "eval-noise");
  return s;
}

TrainSeeds train_seeds(const SeedStreams& s) { return TrainSeeds{s.noise, s.shuffle, s.dropout, s.eval}; }

QuartetConfig model_config(const RunConfig& c) {
  QuartetConfig m = c.model;
  m.vocab_size = c.corpus.vocab_size;
  m.input_dim = VisemeMap::paired(c.corpus.vocab_size).class_count();
  return m;
}

CorpusBundle build_corpus(const RunConfig& c) {
  const SeedStreams seeds = fan_out(c.seed);
  VisemeMap vmap = VisemeMap::paired(c.corpus.vocab_size);
  BigramLm lm = build_bigram_lm(seeds.lm, vmap, c.corpus.kappa);
  TeacherEncoder teacher(model_config(c), seeds.teacher);
  CorpusSpec spec = c.corpus;
  spec.seed = seeds.corpus;
  Corpus corpus = generate_corpus(spec, lm, vmap, teacher);
  return CorpusBundle{std::move(vmap), std::move(lm), std::move(teacher), std::move(corpus)};
}

void write_corpus(const std::filesystem::path& dir, const Corpus& corpus, const VisemeMap& vmap,
                  const ConfigHash& hash) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (ec) throw FeatureFileError(FeatureIoErrc::io_error, "cannot create " + (dir / "features").string());
  json splits = json::object();
  for (const auto& [name, samples] : corpus.splits) {
    json list = json::array();
    for (const auto& s : samples) {
      const std::string xv = "features/" + s.id + ".xv.jpkd";
      const std::string a = "features/" + s.id + ".a.jpkd";
      write_features(dir / xv, s.x_v);
      write_features(dir / a, s.a);
      list.push_back({{"id", s.id}, {"tokens", s.tokens}, {"x_v", xv}, {"a", a}});
    }
    splits[name] = std::move(list);
  }
  const json manifest = {{"format", "jepkd-corpus"},
                         {"version", 1},
                         {"data_hash", hash_hex(hash)},
                         {"vocab_size", vmap.vocab_size()},
                         {"viseme_map", vmap.table()},
                         {"splits", std::move(splits)}};
  write_file_atomic(dir / "manifest.json", manifest.dump(1) + "\n");
}

LoadedCorpus read_corpus(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) {
    throw FeatureFileError(FeatureIoErrc::io_error, "no corpus manifest at " + path.string());
  }
  json m;
  try {
    m = json::parse(read_file_bytes(path));
  } catch (const json::exception& e) {
    throw ConfigError("corpus manifest " + path.string() + ": " + e.what());
  }
  LoadedCorpus out;
  try {
    out.data_hash = m.at("data_hash").get<std::string>();
    const VisemeMap vmap(m.at("viseme_map").get<std::vector<int>>());
    for (const auto& [name, list] : m.at("splits").items()) {
      std::vector<PairedSample> samples;
      samples.reserve(list.size());
      for (const auto& e : list) {
        PairedSample s;
        s.id = e.at("id").get<std::string>();
        s.tokens = e.at("tokens").get<std::vector<int>>();
        s.visemes = viseme_project(s.tokens, vmap);
        s.x_v = read_features(dir / e.at("x_v").get<std::string>());
        s.a = read_features(dir / e.at("a").get<std::string>());
        if (s.x_v.rank() != 2 || s.x_v.dim(0) != s.tokens.size() || s.a.rank() != 2 ||
            s.a.dim(0) != s.tokens.size()) {
          throw ConfigError("corpus manifest: sample " + s.id + " has inconsistent lengths");
        }
        samples.push_back(std::move(s));
      }
      out.corpus.splits.emplace(name, std::move(samples));
    }
  } catch (const json::exception& e) {
    throw ConfigError("corpus manifest " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace jepkd
