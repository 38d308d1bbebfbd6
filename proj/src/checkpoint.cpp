#include "skad/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "skad/config.hpp"
#include "skad/errors.hpp"

namespace skad {

namespace {

void put(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, " %.17g", v);
  out << buf;
}

void put_tensor(std::ostream& out, const Tensor& t) {
  out << ' ' << t.rank();
  for (std::size_t d : t.shape()) out << ' ' << d;
  for (double v : t.values()) put(out, v);
  out << '\n';
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::istringstream line(const std::string& expect) {
    std::string text;
    if (!std::getline(in_, text)) throw ParseError("checkpoint ends before '" + expect + "'", lineno_ + 1);
    ++lineno_;
    std::istringstream ss(text);
    std::string tag;
    ss >> tag;
    if (tag != expect) throw ParseError("expected '" + expect + "', got '" + tag + "'", lineno_);
    return ss;
  }

  std::string raw() {
    std::string text;
    if (!std::getline(in_, text)) throw ParseError("truncated checkpoint", lineno_ + 1);
    ++lineno_;
    return text;
  }

  template <class T>
  T get(std::istringstream& ss) {
    T v{};
    if (!(ss >> v)) throw ParseError("malformed checkpoint field", lineno_);
    return v;
  }

  double get_double(std::istringstream& ss) {
    std::string tok;
    if (!(ss >> tok)) throw ParseError("missing number", lineno_);
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used == tok.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw ParseError("malformed number '" + tok + "'", lineno_);
  }

  Tensor get_tensor(std::istringstream& ss) {
    const auto rank = get<std::size_t>(ss);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::size_t>(ss);
    Tensor t(shape);
    for (double& v : t.values()) v = get_double(ss);
    return t;
  }

  std::size_t lineno() const { return lineno_; }

 private:
  std::istream& in_;
  std::size_t lineno_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Detector& d) {
  out << kCheckpointMagic << " v" << kCheckpointVersion << '\n';
  const KeyValues kv = to_key_values(d.config);
  out << "config " << kv.size() << '\n';
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
  out << "stats";
  for (std::size_t c = 0; c < kCoords; ++c) {
    put(out, d.stats.median[c]);
    put(out, d.stats.iqr[c]);
  }
  out << "\ncenter " << to_string(d.center.manifold) << ' ' << d.center.coords.size();
  for (double v : d.center.coords) put(out, v);
  out << "\ntrain_median_score";
  put(out, d.train_median_score);
  out << "\nparams " << d.model.params().size() << '\n';
  for (const auto& [name, p] : d.model.params()) {
    out << "param " << name << ' ' << (p.decay ? 1 : 0);
    put_tensor(out, p.value);
  }
  const auto& buffers = d.model.batchnorm_buffers();
  out << "batchnorm " << buffers.size() << '\n';
  for (const BatchNormBuffers& b : buffers) {
    out << "running_mean";
    put_tensor(out, b.running_mean);
    out << "running_var";
    put_tensor(out, b.running_var);
  }
  out << "end\n";
}

Detector read_checkpoint(std::istream& in) {
  Reader r(in);
  {
    std::string header = r.raw();
    const std::string expected = std::string(kCheckpointMagic) + " v" + std::to_string(kCheckpointVersion);
    if (header.rfind(kCheckpointMagic, 0) != 0) throw ParseError("not a checkpoint file", 1);
    if (header != expected) {
      throw ConfigError("checkpoint version mismatch: file says '" + header + "', this build reads '" + expected + "'");
    }
  }
  auto cfg_line = r.line("config");
  const auto nkeys = r.get<std::size_t>(cfg_line);
  std::string text;
  for (std::size_t i = 0; i < nkeys; ++i) text += r.raw() + '\n';
  std::istringstream cfg_in(text);
  TrainConfig config = apply_keys(TrainConfig{}, parse_key_values(cfg_in));
  config.validate();

  RobustStats stats;
  auto st = r.line("stats");
  for (std::size_t c = 0; c < kCoords; ++c) {
    stats.median[c] = r.get_double(st);
    stats.iqr[c] = r.get_double(st);
  }
  CenterState center;
  auto cl = r.line("center");
  center.manifold = parse_manifold(r.get<std::string>(cl));
  center.coords.resize(r.get<std::size_t>(cl));
  for (double& v : center.coords) v = r.get_double(cl);
  if (center.manifold != config.manifold) throw StateError("checkpoint center does not match its configured manifold");
  auto ms = r.line("train_median_score");
  const double median = r.get_double(ms);

  Model model(config.model, config.seed);
  auto pl = r.line("params");
  const auto nparams = r.get<std::size_t>(pl);
  if (nparams != model.params().size()) {
    throw ParseError("checkpoint has " + std::to_string(nparams) + " parameters, the configured model has " +
                         std::to_string(model.params().size()),
                     r.lineno());
  }
  for (std::size_t i = 0; i < nparams; ++i) {
    auto p = r.line("param");
    const auto name = r.get<std::string>(p);
    const auto decay = r.get<int>(p);
    Tensor value = r.get_tensor(p);
    if (!model.params().contains(name)) throw ParseError("unknown parameter '" + name + "'", r.lineno());
    Parameter& target = model.params().at(name);
    if (target.value.shape() != value.shape()) {
      throw ParseError("parameter '" + name + "' has shape " + to_string(value.shape()) + ", expected " +
                           to_string(target.value.shape()),
                       r.lineno());
    }
    target.value = std::move(value);
    target.decay = decay != 0;
  }
  auto bl = r.line("batchnorm");
  const auto nbn = r.get<std::size_t>(bl);
  auto& buffers = model.batchnorm_buffers();
  if (nbn != buffers.size()) throw ParseError("batchnorm buffer count mismatch", r.lineno());
  for (BatchNormBuffers& b : buffers) {
    auto m = r.line("running_mean");
    b.running_mean = r.get_tensor(m);
    auto v = r.line("running_var");
    b.running_var = r.get_tensor(v);
  }
  r.line("end");
  Detector d{config, std::move(model), center, stats, median};
  return d;
}

void save_checkpoint(const std::filesystem::path& path, const Detector& detector) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  write_checkpoint(out, detector);
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Detector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace skad
