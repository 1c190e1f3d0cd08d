#include "l2rw/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <type_traits>

namespace l2rw {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class E>
struct EnumTable;

template <>
struct EnumTable<WeighterKind> {
  static constexpr std::pair<const char*, WeighterKind> values[] = {
      {"teacher", WeighterKind::teacher},
      {"uniform", WeighterKind::uniform},
      {"focal", WeighterKind::focal},
      {"spl", WeighterKind::spl}};
};
template <>
struct EnumTable<NoiseKind> {
  static constexpr std::pair<const char*, NoiseKind> values[] = {
      {"none", NoiseKind::none}, {"uniform", NoiseKind::uniform}, {"flip", NoiseKind::flip}};
};
template <>
struct EnumTable<Activation> {
  static constexpr std::pair<const char*, Activation> values[] = {
      {"relu", Activation::relu}, {"tanh", Activation::tanh}};
};
template <>
struct EnumTable<ReconstructionMode> {
  static constexpr std::pair<const char*, ReconstructionMode> values[] = {
      {"checkpoint", ReconstructionMode::checkpoint},
      {"reversal", ReconstructionMode::reversal}};
};
template <>
struct EnumTable<MetricKind> {
  static constexpr std::pair<const char*, MetricKind> values[] = {
      {"log_likelihood", MetricKind::log_likelihood},
      {"expected_accuracy", MetricKind::expected_accuracy}};
};
template <>
struct EnumTable<TeacherOptimizer> {
  static constexpr std::pair<const char*, TeacherOptimizer> values[] = {
      {"momentum", TeacherOptimizer::momentum}, {"adam", TeacherOptimizer::adam}};
};
template <>
struct EnumTable<GradcheckProblem> {
  static constexpr std::pair<const char*, GradcheckProblem> values[] = {
      {"quadratic", GradcheckProblem::quadratic}, {"mlp", GradcheckProblem::mlp}};
};

template <class T, class = void>
struct Codec;

template <>
struct Codec<double> {
  static std::string format(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
  }
  static double parse(const std::string& s) {
    double v = 0;
    const auto t = trim(s);
    auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    if (r.ec != std::errc() || r.ptr != t.data() + t.size())
      throw ConfigError("expected a real number, got '" + s + "'");
    return v;
  }
};

template <class T>
struct Codec<T, std::enable_if_t<std::is_integral_v<T> && !std::is_same_v<T, bool>>> {
  static std::string format(T v) { return std::to_string(v); }
  static T parse(const std::string& s) {
    T v = 0;
    const auto t = trim(s);
    auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    if (r.ec != std::errc() || r.ptr != t.data() + t.size())
      throw ConfigError("expected an integer, got '" + s + "'");
    return v;
  }
};

template <>
struct Codec<bool> {
  static std::string format(bool v) { return v ? "true" : "false"; }
  static bool parse(const std::string& s) {
    const auto t = trim(s);
    if (t == "true") return true;
    if (t == "false") return false;
    throw ConfigError("expected true or false, got '" + s + "'");
  }
};

template <>
struct Codec<std::string> {
  static std::string format(const std::string& v) { return v; }
  static std::string parse(const std::string& s) { return trim(s); }
};

template <class T>
struct Codec<std::vector<T>> {
  static std::string format(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ", ";
      out += Codec<T>::format(v[i]);
    }
    return out;
  }
  static std::vector<T> parse(const std::string& s) {
    std::vector<T> out;
    for (const auto& item : split_list(s)) out.push_back(Codec<T>::parse(item));
    return out;
  }
};

template <class E>
struct Codec<E, std::enable_if_t<std::is_enum_v<E>>> {
  static std::string format(E v) {
    for (const auto& [name, value] : EnumTable<E>::values)
      if (value == v) return name;
    throw ConfigError("unnamed enum value");
  }
  static E parse(const std::string& s) {
    const auto t = trim(s);
    std::string allowed;
    for (const auto& [name, value] : EnumTable<E>::values) {
      if (t == name) return value;
      allowed += allowed.empty() ? name : std::string("|") + name;
    }
    throw ConfigError("expected one of {" + allowed + "}, got '" + s + "'");
  }
};

template <>
struct Codec<FeatureSet> {
  static std::string format(const FeatureSet& v) { return to_string(v); }
  static FeatureSet parse(const std::string& s) { return parse_feature_set(trim(s)); }
};

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class Access>
Field field(std::string section, std::string key, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<ExperimentConfig&>()))>;
  return Field{std::move(section), std::move(key),
               [access](const ExperimentConfig& c) { return Codec<T>::format(access(c)); },
               [access](ExperimentConfig& c, const std::string& s) {
                 access(c) = Codec<T>::parse(s);
               }};
}

#define L2RW_FIELD(sec, member, key) \
  field(#sec, #key, [](auto& c) -> auto& { return c.member.key; })

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      L2RW_FIELD(data, data, source),
      L2RW_FIELD(data, data, path),
      L2RW_FIELD(data, data, classes),
      L2RW_FIELD(data, data, per_class),
      L2RW_FIELD(data, data, dim),
      L2RW_FIELD(data, data, spread),
      L2RW_FIELD(data, data, separation),
      L2RW_FIELD(data, data, confusable_offset),
      L2RW_FIELD(data, data, seed),
      L2RW_FIELD(data, data, valid_fraction),
      L2RW_FIELD(data, data, test_fraction),
      L2RW_FIELD(noise, noise, kind),
      L2RW_FIELD(noise, noise, p),
      L2RW_FIELD(noise, noise, seed),
      L2RW_FIELD(noise, noise, uniform_includes_true),
      L2RW_FIELD(student, student, hidden),
      L2RW_FIELD(student, student, activation),
      L2RW_FIELD(student, student, feature_level),
      L2RW_FIELD(student, student, lambda),
      L2RW_FIELD(student, student, lr),
      L2RW_FIELD(student, student, lr_drop_epochs),
      L2RW_FIELD(student, student, lr_drop_factor),
      L2RW_FIELD(student, student, momentum),
      L2RW_FIELD(student, student, batch_size),
      L2RW_FIELD(student, student, epochs),
      L2RW_FIELD(teacher, teacher, weighter),
      L2RW_FIELD(teacher, teacher, features),
      L2RW_FIELD(teacher, teacher, hidden_layers),
      L2RW_FIELD(teacher, teacher, optimizer),
      L2RW_FIELD(teacher, teacher, lr),
      L2RW_FIELD(teacher, teacher, momentum),
      L2RW_FIELD(teacher, teacher, K),
      L2RW_FIELD(teacher, teacher, B),
      L2RW_FIELD(teacher, teacher, mode),
      L2RW_FIELD(teacher, teacher, metric),
      L2RW_FIELD(teacher, teacher, extra_batch_mean),
      L2RW_FIELD(teacher, teacher, warmup_epochs),
      L2RW_FIELD(teacher, teacher, valid_batch),
      L2RW_FIELD(baselines, baselines, focal_gamma),
      L2RW_FIELD(baselines, baselines, spl_percentile),
      L2RW_FIELD(run, run, seeds),
      L2RW_FIELD(gradcheck, gradcheck, problem),
      L2RW_FIELD(gradcheck, gradcheck, samples),
      L2RW_FIELD(gradcheck, gradcheck, steps),
      L2RW_FIELD(gradcheck, gradcheck, hidden),
      L2RW_FIELD(gradcheck, gradcheck, input_dim),
      L2RW_FIELD(gradcheck, gradcheck, classes),
      L2RW_FIELD(gradcheck, gradcheck, epsilon),
      L2RW_FIELD(gradcheck, gradcheck, teacher_epsilon),
      L2RW_FIELD(gradcheck, gradcheck, corrupt_sign),
  };
  return fields;
}

#undef L2RW_FIELD

const Field& lookup(const std::string& section, const std::string& key) {
  for (const auto& f : schema())
    if (f.section == section && f.key == key) return f;
  throw ConfigError("unknown config key [" + section + "] " + key);
}

}  // namespace

void set_config_value(ExperimentConfig& c, const std::string& section, const std::string& key,
                      const std::string& value) {
  const Field& f = lookup(section, key);
  try {
    f.set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError("[" + section + "] " + key + ": " + e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax error: ") + e.what());
  }
  ExperimentConfig c;
  for (const auto& [section, body] : tree) {
    if (body.empty())
      throw ConfigError("config key '" + section + "' must be inside a [section]");
    for (const auto& [key, value] : body) set_config_value(c, section, key, value.data());
  }
  validate(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::string out;
  std::string current;
  for (const auto& f : schema()) {
    if (f.section != current) {
      if (!current.empty()) out += "\n";
      out += "[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a(serialize_config(c)); }

void validate(const ExperimentConfig& c) {
  const auto& t = c.teacher;
  if (c.data.source != "blobs" && c.data.source != "file")
    throw ConfigError("[data] source must be blobs or file");
  if (c.data.source == "file" && c.data.path.empty())
    throw ConfigError("[data] path is required when source = file");
  if (c.data.classes < 2) throw ConfigError("[data] classes must be >= 2");
  if (c.data.per_class < 1 || c.data.dim < 1) throw ConfigError("[data] empty dataset");
  if (c.data.spread < 0) throw ConfigError("[data] spread must be >= 0");
  if (c.data.valid_fraction <= 0 || c.data.test_fraction < 0 ||
      c.data.valid_fraction + c.data.test_fraction >= 1.0)
    throw ConfigError("[data] split fractions must leave a non-empty train split");
  if (!(c.noise.p >= 0 && c.noise.p <= 1)) throw ConfigError("[noise] p must be in [0, 1]");
  if (c.noise.kind == NoiseKind::flip && c.data.classes < 3)
    throw ConfigError("[noise] flip noise requires at least 3 classes");
  if (c.student.batch_size < 2) throw ConfigError("[student] batch_size must be >= 2");
  if (c.student.epochs < 1) throw ConfigError("[student] epochs must be >= 1");
  if (c.student.lr <= 0) throw ConfigError("[student] lr must be > 0");
  if (c.student.momentum < 0) throw ConfigError("[student] momentum must be >= 0");
  if (c.student.lambda < 0) throw ConfigError("[student] lambda must be >= 0");
  for (Index h : c.student.hidden)
    if (h < 1) throw ConfigError("[student] hidden widths must be >= 1");
  if (c.student.feature_level < 0 ||
      c.student.feature_level > static_cast<int>(c.student.hidden.size()))
    throw ConfigError("[student] feature_level out of range");
  if (t.K < 1 || t.B < 1 || t.B > t.K) throw ConfigError("[teacher] need 1 <= B <= K");
  const bool meta = t.weighter == WeighterKind::teacher || t.weighter == WeighterKind::uniform;
  if (meta && !(c.student.momentum > 0))
    throw ConfigError("[teacher] hypergradients require student momentum > 0");
  if (!t.features.any()) throw ConfigError("[teacher] features must enable at least one group");
  if (t.hidden_layers < 0 || t.hidden_layers > 2)
    throw ConfigError("[teacher] hidden_layers must be 0, 1 or 2");
  if (t.lr < 0) throw ConfigError("[teacher] lr must be >= 0");
  if (t.warmup_epochs < 0) throw ConfigError("[teacher] warmup_epochs must be >= 0");
  if (t.valid_batch < 0) throw ConfigError("[teacher] valid_batch must be >= 0");
  if (c.baselines.focal_gamma < 0) throw ConfigError("[baselines] focal_gamma must be >= 0");
  if (c.baselines.spl_percentile < 0 || c.baselines.spl_percentile > 100)
    throw ConfigError("[baselines] spl_percentile must be in [0, 100]");
  if (c.run.seeds.empty()) throw ConfigError("[run] seeds must not be empty");
  if (c.gradcheck.samples < 1 || c.gradcheck.steps < 1)
    throw ConfigError("[gradcheck] samples and steps must be >= 1");
  if (c.gradcheck.epsilon <= 0) throw ConfigError("[gradcheck] epsilon must be > 0");
  if (c.gradcheck.teacher_epsilon <= 0)
    throw ConfigError("[gradcheck] teacher_epsilon must be > 0");
}

std::string to_string(WeighterKind k) { return Codec<WeighterKind>::format(k); }
std::string to_string(NoiseKind k) { return Codec<NoiseKind>::format(k); }
std::string to_string(ReconstructionMode m) { return Codec<ReconstructionMode>::format(m); }
WeighterKind parse_weighter(const std::string& s) { return Codec<WeighterKind>::parse(s); }
ReconstructionMode parse_mode(const std::string& s) {
  return Codec<ReconstructionMode>::parse(s);
}

FeatureSet parse_feature_set(const std::string& text) {
  FeatureSet fs{false, false, false};
  std::stringstream ss(text);
  std::string tok;
  bool any = false;
  while (std::getline(ss, tok, '+')) {
    tok = trim(tok);
    if (tok == "I" || tok == "I0") fs.internal = true;
    else if (tok == "M0") fs.label = true;
    else if (tok == "M1") fs.surface = true;
    else throw ConfigError("unknown teacher feature '" + tok + "' (use I0, M0, M1)");
    any = true;
  }
  if (!any) throw ConfigError("empty teacher feature set");
  return fs;
}

std::string to_string(const FeatureSet& fs) {
  std::string out;
  auto add = [&out](const char* s) {
    if (!out.empty()) out += "+";
    out += s;
  };
  if (fs.internal) add("I0");
  if (fs.label) add("M0");
  if (fs.surface) add("M1");
  return out;
}

}  // namespace l2rw
