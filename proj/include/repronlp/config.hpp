#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "repronlp/corpus.hpp"
#include "repronlp/vectorize.hpp"

namespace repronlp {

inline constexpr std::string_view kRefPrefix = "ref:";

struct ConfigSection {
  std::string name;
  std::vector<std::pair<std::string, std::string>> entries;
  std::size_t line = 0;

  const std::string* find(std::string_view key) const;
};

/// INI document: `[section]` headers, `key = value` lines, `#` or `;`
/// comment lines. Values of the form `ref:<section>` reference another
/// section.
class ConfigDoc {
 public:
  const std::vector<ConfigSection>& sections() const { return sections_; }
  const ConfigSection* find(std::string_view name) const;
  const std::string* value(std::string_view section, std::string_view key) const;

  ConfigSection& add_section(std::string name, std::size_t line = 0);
  /// Inserts or replaces; creates the section when missing.
  void set(std::string_view section, std::string_view key, std::string value);

 private:
  std::vector<ConfigSection> sections_;
};

ConfigDoc parse_config(std::string_view text, std::string_view origin = "config");
ConfigDoc load_config(const std::filesystem::path& path);

/// Sections sorted by name, keys sorted, values trimmed, LF endings.
std::string canonical_config(const ConfigDoc& doc);
std::string canonical_config(const ConfigDoc& doc, const std::function<bool(const ConfigSection&)>& keep);

/// SHA-256 of the canonical form, excluding the [runtime] section.
std::string config_fingerprint(const ConfigDoc& doc);
/// Fingerprint of the sections that determine store contents (everything
/// but [model], [feature_set:*] and [runtime]).
std::string data_fingerprint(const ConfigDoc& doc);

bool is_ref(std::string_view value);
std::string ref_target(std::string_view value);

/// Throws ConfigError for dangling refs, or for a cycle with its path
/// ("a -> b -> a").
void check_references(const ConfigDoc& doc);

enum class Activation { relu, tanh };
std::string_view activation_name(Activation a);

struct ModelConfig {
  std::string feature_set_name;
  std::vector<std::string> feature_set;
  std::vector<std::size_t> hidden_widths;
  Activation activation = Activation::relu;
  double learning_rate = 0.1;
  std::size_t epochs = 10;
  std::size_t early_stop_patience = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;

  void validate() const;
};

struct ExperimentPlan {
  std::uint64_t seed = 0;
  std::filesystem::path corpus_path;
  SplitSpec splits;
  std::size_t batch_size = 32;
  std::size_t chunk_size = 1;
  std::size_t workers = 1;
  std::size_t epoch_delay_ms = 0;
  std::vector<VectorizerSpec> vectorizers;
  std::map<std::string, std::vector<std::string>> feature_sets;
  ModelConfig model;
  /// Sections in dependency order (referenced sections first).
  std::vector<std::string> instantiation_order;
  std::string config_fingerprint;
  std::string data_fingerprint;
};

/// Validates and instantiates the whole pipeline description. Relative paths
/// resolve against `base_dir`.
ExperimentPlan resolve(const ConfigDoc& doc, const std::filesystem::path& base_dir = {});

}  // namespace repronlp
