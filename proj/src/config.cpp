#include "repronlp/config.hpp"

#include <algorithm>
#include <charconv>
#include <set>

#include "repronlp/digest.hpp"
#include "repronlp/error.hpp"

namespace repronlp {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t pos = 0;
  for (;;) {
    auto comma = s.find(',', pos);
    auto item = trim(s.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

}  // namespace

const std::string* ConfigSection::find(std::string_view key) const {
  for (const auto& [k, v] : entries) {
    if (k == key) return &v;
  }
  return nullptr;
}

const ConfigSection* ConfigDoc::find(std::string_view name) const {
  for (const auto& s : sections_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

const std::string* ConfigDoc::value(std::string_view section, std::string_view key) const {
  const auto* s = find(section);
  return s ? s->find(key) : nullptr;
}

ConfigSection& ConfigDoc::add_section(std::string name, std::size_t line) {
  sections_.push_back(ConfigSection{std::move(name), {}, line});
  return sections_.back();
}

void ConfigDoc::set(std::string_view section, std::string_view key, std::string value) {
  auto it = std::find_if(sections_.begin(), sections_.end(), [&](const auto& s) { return s.name == section; });
  ConfigSection& sec = it == sections_.end() ? add_section(std::string(section)) : *it;
  for (auto& [k, v] : sec.entries) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  sec.entries.emplace_back(std::string(key), std::move(value));
}

ConfigDoc parse_config(std::string_view text, std::string_view origin) {
  ConfigDoc doc;
  ConfigSection* current = nullptr;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  const std::string where(origin);
  auto fail = [&](const std::string& msg) { throw ConfigError(where + ":" + std::to_string(line_no) + ": " + msg); };
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      const std::string name(trim(line.substr(1, line.size() - 2)));
      if (name.empty()) fail("empty section name");
      if (const auto* prev = doc.find(name)) {
        fail("duplicate section [" + name + "] (first defined at line " + std::to_string(prev->line) + ")");
      }
      current = &doc.add_section(name, line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) fail("empty key");
    if (current == nullptr) fail("key '" + key + "' outside of any section");
    if (current->find(key) != nullptr) fail("duplicate key '" + key + "' in [" + current->name + "]");
    current->entries.emplace_back(key, std::string(trim(line.substr(eq + 1))));
  }
  return doc;
}

ConfigDoc load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file_bytes(path);
  } catch (const DataError&) {
    throw ConfigError("cannot read config " + path.string());
  }
  return parse_config(text, path.string());
}

std::string canonical_config(const ConfigDoc& doc, const std::function<bool(const ConfigSection&)>& keep) {
  std::vector<const ConfigSection*> secs;
  for (const auto& s : doc.sections()) {
    if (keep(s)) secs.push_back(&s);
  }
  std::sort(secs.begin(), secs.end(), [](auto* a, auto* b) { return a->name < b->name; });
  std::string out;
  for (std::size_t i = 0; i < secs.size(); ++i) {
    if (i) out += "\n";
    out += "[" + secs[i]->name + "]\n";
    auto entries = secs[i]->entries;
    std::sort(entries.begin(), entries.end());
    for (const auto& [k, v] : entries) out += k + " = " + std::string(trim(v)) + "\n";
  }
  return out;
}

std::string canonical_config(const ConfigDoc& doc) {
  return canonical_config(doc, [](const ConfigSection&) { return true; });
}

std::string config_fingerprint(const ConfigDoc& doc) {
  return sha256_hex(canonical_config(doc, [](const ConfigSection& s) { return s.name != "runtime"; }));
}

std::string data_fingerprint(const ConfigDoc& doc) {
  return sha256_hex(canonical_config(doc, [](const ConfigSection& s) {
    return s.name != "runtime" && s.name != "model" && !starts_with(s.name, "feature_set:");
  }));
}

bool is_ref(std::string_view value) { return starts_with(value, kRefPrefix); }

std::string ref_target(std::string_view value) { return std::string(trim(value.substr(kRefPrefix.size()))); }

namespace {

std::vector<std::string> refs_of(const ConfigSection& s) {
  std::vector<std::string> out;
  for (const auto& [k, v] : s.entries) {
    if (is_ref(v)) out.push_back(ref_target(v));
  }
  return out;
}

// Depth-first topological sort; referenced sections come first.
std::vector<std::string> dependency_order(const ConfigDoc& doc) {
  enum class Mark { none, active, done };
  std::map<std::string, Mark> mark;
  std::vector<std::string> order;
  std::vector<std::string> stack;

  std::function<void(const ConfigSection&)> visit = [&](const ConfigSection& s) {
    mark[s.name] = Mark::active;
    stack.push_back(s.name);
    for (const auto& target : refs_of(s)) {
      const auto* t = doc.find(target);
      if (t == nullptr) {
        throw ConfigError("section [" + s.name + "] references undeclared section '" + target + "'");
      }
      if (mark[target] == Mark::active) {
        auto start = std::find(stack.begin(), stack.end(), target);
        std::string path;
        for (auto it = start; it != stack.end(); ++it) path += *it + " -> ";
        throw ConfigError("reference cycle: " + path + target);
      }
      if (mark[target] == Mark::none) visit(*t);
    }
    stack.pop_back();
    mark[s.name] = Mark::done;
    order.push_back(s.name);
  };
  for (const auto& s : doc.sections()) {
    if (mark[s.name] == Mark::none) visit(s);
  }
  return order;
}

class SectionReader {
 public:
  SectionReader(const ConfigSection& s, std::set<std::string> allowed) : s_(s), allowed_(std::move(allowed)) {
    for (const auto& [k, v] : s_.entries) {
      if (!allowed_.count(k)) fail("unknown key '" + k + "'");
    }
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError("[" + s_.name + "] " + msg); }

  std::optional<std::string> get(std::string_view key) const {
    if (const auto* v = s_.find(key)) return *v;
    return std::nullopt;
  }

  std::string require(std::string_view key) const {
    auto v = get(key);
    if (!v || v->empty()) fail("missing required key '" + std::string(key) + "'");
    return *v;
  }

  template <class T>
  T number(std::string_view key, T fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    T out{};
    auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || ptr != v->data() + v->size()) {
      fail("key '" + std::string(key) + "': '" + *v + "' is not a valid number");
    }
    return out;
  }

  bool boolean(std::string_view key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "yes" || *v == "1") return true;
    if (*v == "false" || *v == "no" || *v == "0") return false;
    fail("key '" + std::string(key) + "': '" + *v + "' is not a boolean");
  }

 private:
  const ConfigSection& s_;
  std::set<std::string> allowed_;
};

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

void check_references(const ConfigDoc& doc) { dependency_order(doc); }

std::string_view activation_name(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

void ModelConfig::validate() const {
  if (feature_set.empty()) throw ConfigError("model: feature set is empty");
  if (class_names.size() < 2) throw ConfigError("model: at least two class names are required");
  std::set<std::string> uniq(class_names.begin(), class_names.end());
  if (uniq.size() != class_names.size()) throw ConfigError("model: class names must be distinct");
  for (auto w : hidden_widths) {
    if (w == 0) throw ConfigError("model: hidden widths must be positive");
  }
  if (!(learning_rate > 0.0)) throw ConfigError("model: learning_rate must be positive");
  if (epochs == 0) throw ConfigError("model: epochs must be positive");
}

ExperimentPlan resolve(const ConfigDoc& doc, const std::filesystem::path& base_dir) {
  ExperimentPlan plan;
  plan.instantiation_order = dependency_order(doc);

  std::set<std::string> ref_targets;
  for (const auto& s : doc.sections()) {
    for (auto& t : refs_of(s)) ref_targets.insert(t);
  }

  const ConfigSection* model_section = nullptr;
  for (const auto& name : plan.instantiation_order) {
    const ConfigSection& s = *doc.find(name);
    if (name == "experiment") {
      SectionReader r(s, {"seed", "name"});
      plan.seed = r.number<std::uint64_t>("seed", 0);
    } else if (name == "corpus") {
      SectionReader r(s, {"path"});
      plan.corpus_path = resolve_path(base_dir, r.require("path"));
    } else if (name == "splits") {
      SectionReader r(s, {"proportions", "shuffle"});
      for (const auto& item : split_list(r.require("proportions"))) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) r.fail("proportion '" + item + "' is not name:fraction");
        const std::string split_name(trim(std::string_view(item).substr(0, colon)));
        const auto frac = trim(std::string_view(item).substr(colon + 1));
        double p = 0;
        auto [ptr, ec] = std::from_chars(frac.data(), frac.data() + frac.size(), p);
        if (ec != std::errc() || ptr != frac.data() + frac.size()) r.fail("bad fraction in '" + item + "'");
        plan.splits.proportions.emplace_back(split_name, p);
      }
      plan.splits.shuffle = r.boolean("shuffle", true);
      plan.splits.validate();
    } else if (name == "batch") {
      SectionReader r(s, {"batch_size", "chunk_size"});
      plan.batch_size = r.number<std::size_t>("batch_size", 32);
      plan.chunk_size = r.number<std::size_t>("chunk_size", 1);
      if (plan.batch_size == 0 || plan.chunk_size == 0) r.fail("batch_size and chunk_size must be positive");
    } else if (name == "runtime") {
      SectionReader r(s, {"workers", "epoch_delay_ms"});
      plan.workers = r.number<std::size_t>("workers", 1);
      plan.epoch_delay_ms = r.number<std::size_t>("epoch_delay_ms", 0);
      if (plan.workers == 0) r.fail("workers must be positive");
    } else if (starts_with(name, "vectorizer:")) {
      SectionReader r(s, {"type", "feature_id", "annotation", "unknown", "categories", "table"});
      VectorizerSpec v;
      v.name = name.substr(std::string_view("vectorizer:").size());
      v.kind = parse_kind(r.require("type"));
      v.feature_id = r.get("feature_id").value_or(v.name);
      v.annotation = r.get("annotation").value_or("");
      const auto policy = r.get("unknown").value_or("ignore_row_zero");
      if (policy == "error") v.unknown_policy = UnknownPolicy::error;
      else if (policy == "ignore_row_zero") v.unknown_policy = UnknownPolicy::ignore_row_zero;
      else r.fail("unknown policy '" + policy + "'");
      if (auto cats = r.get("categories")) v.fixed_categories = split_list(*cats);
      if (v.kind == VectorizerKind::embedding) {
        const auto table = r.require("table");
        if (!is_ref(table)) r.fail("'table' must be a ref:<section>");
        const auto* target = doc.find(ref_target(table));
        const auto* p = target ? target->find("path") : nullptr;
        if (p == nullptr) r.fail("embedding table section '" + ref_target(table) + "' has no path");
        v.embedding_source = *p;
        v.embedding_path = resolve_path(base_dir, *p);
      }
      for (const auto& other : plan.vectorizers) {
        if (other.feature_id == v.feature_id) r.fail("duplicate feature_id '" + v.feature_id + "'");
      }
      try {
        Vectorizer check(v);
      } catch (const ConfigError& e) {
        r.fail(e.what());
      }
      plan.vectorizers.push_back(std::move(v));
    } else if (starts_with(name, "feature_set:")) {
      SectionReader r(s, {"features"});
      plan.feature_sets[name.substr(std::string_view("feature_set:").size())] = split_list(r.require("features"));
    } else if (name == "model") {
      model_section = &s;
    } else if (!ref_targets.count(name)) {
      throw ConfigError("unknown section [" + name + "]");
    }
  }

  if (plan.corpus_path.empty()) throw ConfigError("missing [corpus] section");
  if (plan.splits.proportions.empty()) throw ConfigError("missing [splits] section");
  if (plan.vectorizers.empty()) throw ConfigError("no [vectorizer:*] sections declared");

  for (const auto& [fs_name, ids] : plan.feature_sets) {
    if (ids.empty()) throw ConfigError("[feature_set:" + fs_name + "] is empty");
    for (const auto& id : ids) {
      const bool known = std::any_of(plan.vectorizers.begin(), plan.vectorizers.end(),
                                     [&](const auto& v) { return v.feature_id == id; });
      if (!known) throw ConfigError("[feature_set:" + fs_name + "] lists undeclared feature '" + id + "'");
    }
  }

  if (model_section != nullptr) {
    SectionReader r(*model_section, {"feature_set", "hidden", "activation", "learning_rate", "epochs",
                                     "early_stop_patience", "classes"});
    auto& m = plan.model;
    const auto fs = r.require("feature_set");
    if (!is_ref(fs)) r.fail("feature_set must be ref:feature_set:<name>");
    const auto target = ref_target(fs);
    if (!starts_with(target, "feature_set:")) r.fail("feature_set must reference a [feature_set:*] section");
    m.feature_set_name = target.substr(std::string_view("feature_set:").size());
    m.feature_set = plan.feature_sets.at(m.feature_set_name);
    for (const auto& w : split_list(r.get("hidden").value_or(""))) {
      std::size_t width = 0;
      auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), width);
      if (ec != std::errc() || ptr != w.data() + w.size()) r.fail("bad hidden width '" + w + "'");
      m.hidden_widths.push_back(width);
    }
    const auto act = r.get("activation").value_or("relu");
    if (act == "relu") m.activation = Activation::relu;
    else if (act == "tanh") m.activation = Activation::tanh;
    else r.fail("unknown activation '" + act + "'");
    m.learning_rate = r.number<double>("learning_rate", 0.1);
    m.epochs = r.number<std::size_t>("epochs", 10);
    m.early_stop_patience = r.number<std::size_t>("early_stop_patience", 0);
    m.class_names = split_list(r.require("classes"));
    m.seed = plan.seed;
    m.validate();
  }

  plan.config_fingerprint = config_fingerprint(doc);
  plan.data_fingerprint = data_fingerprint(doc);
  return plan;
}

}  // namespace repronlp
