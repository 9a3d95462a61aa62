#include "protoconcepts/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "protoconcepts/diagnostics.hpp"

namespace protoconcepts {

namespace {

using VT = ValueType;

std::vector<ConfigKey> build_schema() {
  std::vector<ConfigKey> s = {
      {"model", "backbone", VT::String, "tiny-cnn", "feature extractor id (tiny-cnn is built in)"},
      {"model", "image_size", VT::Int, "64", "square input resolution in pixels"},
      {"model", "latent_dim", VT::Int, "16", "latent patch dimension D produced by the add-on layers"},
      {"model", "prototypes_per_class", VT::Int, "10", "class-specific prototypes per class"},
      {"model", "num_classes", VT::Int, "0", "number of classes; 0 takes it from the dataset"},
      {"model", "assignment", VT::String, "class-specific", "class-specific | shared"},
      {"model", "assignment_file", VT::String, "",
       "shared mode: text file with one row per prototype of C 0/1 entries"},

      {"geometry", "kind", VT::String, "log", "log (squared-L2 balls) | cosine (angular balls)"},
      {"geometry", "epsilon", VT::Real, "1e-4", "stability constant of the log activation"},
      {"geometry", "min_radius", VT::Real, "1e-6", "floor of the effective radius"},
      {"geometry", "radius_init", VT::Real, "0.3", "initial radius (squared-distance scale for log, radians for cosine)"},
      {"geometry", "radius_small", VT::Real, "0.0005", "radius used by the ablation preset name 'small'"},
      {"geometry", "radius_medium", VT::Real, "0.3", "radius used by the ablation preset name 'medium'"},
      {"geometry", "radius_large", VT::Real, "0.6", "radius used by the ablation preset name 'large'"},

      {"losses", "w_ce", VT::Real, "1.0", "cross-entropy weight"},
      {"losses", "w_clstk", VT::Real, "0.8", "top-k cluster loss weight"},
      {"losses", "w_sep", VT::Real, "-0.08", "separation loss weight (negative pushes wrong-class prototypes away)"},
      {"losses", "w_rad", VT::Real, "0.01", "radius loss weight"},
      {"losses", "k", VT::Int, "10", "number of nearest same-class prototypes in the cluster loss"},
      {"losses", "l1", VT::Real, "1e-4", "L1 weight on wrong-class evidence weights during finetuning"},
      {"losses", "w_subspace_sep", VT::Real, "0",
       "TesNet subspace-separation weight (reference only; needs a registered auxiliary loss)"},
      {"losses", "w_orthogonality", VT::Real, "0",
       "TesNet orthogonality weight (reference only; needs a registered auxiliary loss)"},

      {"schedule", "optimizer", VT::String, "adam", "optimizer family (adam)"},
      {"schedule", "beta1", VT::Real, "0.9", "first-moment decay"},
      {"schedule", "beta2", VT::Real, "0.999", "second-moment decay"},
      {"schedule", "adam_eps", VT::Real, "1e-8", "optimizer denominator epsilon"},
      {"schedule", "weight_decay", VT::Real, "1e-3", "L2 decay applied to backbone and add-on weights"},
      {"schedule", "batch_size", VT::Int, "20", "images per optimizer step"},
      {"schedule", "seed", VT::Int, "1", "seed for initialization and data order"},
      {"schedule", "lr_step_epochs", VT::Int, "0", "joint stage: multiply learning rates by lr_gamma every N epochs (0 = off)"},
      {"schedule", "lr_gamma", VT::Real, "0.1", "joint stage step decay factor"},
  };
  struct StageDefaults {
    const char* name;
    const char* epochs;
    const char* backbone;
    const char* addon;
    const char* centers;
    const char* radii;
    const char* last;
  };
  const StageDefaults stages[] = {
      {"warmup", "3", "0", "3e-3", "3e-3", "0.5e-4", "0"},
      {"joint", "10", "1e-3", "3e-3", "3e-3", "0", "1e-4"},
      {"finetune", "10", "0", "0", "0", "0", "1e-2"},
  };
  for (const auto& st : stages) {
    const std::string sec = std::string("schedule.") + st.name;
    s.push_back({sec, "epochs", VT::Int, st.epochs, "stage duration in epochs"});
    s.push_back({sec, "lr_backbone", VT::Real, st.backbone, "learning rate of the backbone f (0 = frozen)"});
    s.push_back({sec, "lr_addon", VT::Real, st.addon, "learning rate of the add-on layers (0 = frozen)"});
    s.push_back({sec, "lr_centers", VT::Real, st.centers, "learning rate of the prototype centers (0 = frozen)"});
    s.push_back({sec, "lr_radii", VT::Real, st.radii, "learning rate of the radius parameters (0 = frozen)"});
    s.push_back({sec, "lr_last_layer", VT::Real, st.last, "learning rate of the evidence weights (0 = frozen)"});
  }
  const std::vector<ConfigKey> tail = {
      {"data", "root", VT::String, "data/synthetic-small", "dataset root containing train/ and test/ (relative to the config file)"},
      {"data", "synthetic", VT::Bool, "true", "generate the synthetic concept dataset at root when missing"},
      {"data", "synthetic_classes", VT::Int, "4", "synthetic: number of (shape, color) classes"},
      {"data", "synthetic_train_per_class", VT::Int, "200", "synthetic: training images per class"},
      {"data", "synthetic_test_per_class", VT::Int, "100", "synthetic: test images per class"},
      {"data", "synthetic_noise", VT::Real, "0.12", "synthetic: background texture and pixel noise level in [0, 1]"},
      {"data", "synthetic_seed", VT::Int, "7", "synthetic: render seed"},
      {"data", "crop_table", VT::String, "", "optional crop table (image_path x1 y1 x2 y2 per line)"},
      {"data", "augment_copies", VT::Int, "0", "offline augmentation copies per training image"},
      {"data", "augment_rotation", VT::Real, "15", "max rotation in degrees"},
      {"data", "augment_shear", VT::Real, "10", "max shear in degrees"},
      {"data", "augment_skew", VT::Real, "10", "max perspective skew in degrees"},
      {"data", "augment_flip", VT::Bool, "true", "random horizontal flips"},
      {"data", "augment_root", VT::String, "", "output directory for augmented images (default <root>-augmented)"},

      {"prune", "enabled", VT::Bool, "true", "mask prototypes whose balls contain no training patch"},

      {"explain", "top_n", VT::Int, "5", "member patches shown per prototype gallery"},
      {"explain", "top_p", VT::Int, "3", "prototype rows per scoresheet"},
  };
  s.insert(s.end(), tail.begin(), tail.end());
  return s;
}

const ConfigKey* find_key(const std::string& path) {
  for (const auto& k : config_schema())
    if (k.path() == path) return &k;
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no" || v == "off") {
    out = false;
    return true;
  }
  return false;
}

void type_check(const ConfigKey& key, const std::string& value) {
  switch (key.type) {
    case VT::Int: {
      long long v = 0;
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || p != value.data() + value.size()) {
        throw ConfigError("config key " + key.path() + " expects an integer, got '" + value + "'");
      }
      break;
    }
    case VT::Real: {
      char* end = nullptr;
      errno = 0;
      std::strtod(value.c_str(), &end);
      if (value.empty() || end != value.c_str() + value.size() || errno == ERANGE) {
        throw ConfigError("config key " + key.path() + " expects a real number, got '" + value + "'");
      }
      break;
    }
    case VT::Bool: {
      bool b = false;
      if (!parse_bool(value, b)) throw ConfigError("config key " + key.path() + " expects true/false, got '" + value + "'");
      break;
    }
    case VT::String:
      break;
  }
}

const char* type_name(ValueType t) {
  switch (t) {
    case VT::Int: return "int";
    case VT::Real: return "real";
    case VT::Bool: return "bool";
    case VT::String: return "string";
  }
  return "?";
}

}  // namespace

const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = build_schema();
  return schema;
}

std::string config_schema_help() {
  std::ostringstream os;
  os << "Configuration keys (override with --set section.key=value):\n";
  std::string section;
  for (const auto& k : config_schema()) {
    if (k.section != section) {
      section = k.section;
      os << "  [" << section << "]\n";
    }
    os << "    " << k.key << " (" << type_name(k.type) << ", default '" << k.default_value << "'): " << k.doc << '\n';
  }
  return os.str();
}

Config Config::defaults() {
  Config c;
  for (const auto& k : config_schema()) c.values_[k.path()] = k.default_value;
  return c;
}

Config Config::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw ConfigError("config not readable: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Config c = parse(ss.str(), path.string());
  c.base_dir_ = std::filesystem::absolute(path).parent_path();
  return c;
}

Config Config::parse(std::string_view text, const std::string& source) {
  boost::property_tree::ptree tree;
  std::istringstream is{std::string(text)};
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("malformed config " + source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  Config c = defaults();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config " + source + ": key '" + section + "' appears outside any section");
    }
    for (const auto& [key, node] : body) c.set(section + "." + key, trim(node.data()));
  }
  return c;
}

void Config::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' must have the form section.key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& dotted_path, const std::string& value) {
  const ConfigKey* key = find_key(dotted_path);
  if (!key) throw ConfigError("unknown config key '" + dotted_path + "'");
  type_check(*key, value);
  values_[dotted_path] = value;
}

const std::string& Config::raw(const std::string& dotted_path) const {
  auto it = values_.find(dotted_path);
  if (it == values_.end()) throw ConfigError("unknown config key '" + dotted_path + "'");
  return it->second;
}

long long Config::get_int(const std::string& p) const {
  const auto& v = raw(p);
  long long out = 0;
  std::from_chars(v.data(), v.data() + v.size(), out);
  return out;
}

double Config::get_real(const std::string& p) const { return std::strtod(raw(p).c_str(), nullptr); }

bool Config::get_bool(const std::string& p) const {
  bool b = false;
  parse_bool(raw(p), b);
  return b;
}

std::string Config::get_string(const std::string& p) const { return raw(p); }

std::string Config::to_text() const {
  std::ostringstream os;
  std::string section;
  for (const auto& k : config_schema()) {
    if (k.section != section) {
      if (!section.empty()) os << '\n';
      section = k.section;
      os << '[' << section << "]\n";
    }
    os << k.key << " = " << raw(k.path()) << '\n';
  }
  return os.str();
}

}  // namespace protoconcepts
