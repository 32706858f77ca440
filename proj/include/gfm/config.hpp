#pragma once

// Plain-text key-value files for parameters, controllers and scenarios.
//
//   # comment
//   key = value unit
//
// Numeric entries carry a unit tag, `si` or `pu`; words (names, flags,
// element grids without numbers) carry none. Times are always seconds and
// take `si`. Writers emit %.17g so a written file parses back exactly.

#include "gfm/controllers.hpp"
#include "gfm/plant.hpp"
#include "gfm/simkit.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gfm::config {

struct Entry {
  std::string key;
  std::string value;  // without the unit tag
  std::string unit;   // "si", "pu" or empty
  int line = 0;
};

struct Document {
  std::string source;  // path or "<stream>", used in messages
  std::vector<Entry> entries;

  /// Entries with this key, in file order.
  std::vector<const Entry*> all(const std::string& key) const;
};

/// Throws ConfigError with source and line on malformed lines.
Document parse(std::istream& in, const std::string& source = "<stream>");
/// Throws ConfigError naming the path when it cannot be read.
Document load(const std::string& path);

// --- parameters ---------------------------------------------------------------------------
// Base values (Sn, Vn, Vdc_base, omega_n) are si only; Lf Cf Lg Rg Rf Cdc
// take either tag; Dp Dq Vg are pu only; include_rf = true|false. si
// entries are converted first, pu entries then override. Missing keys keep
// the reference values.

plant::ConverterParams read_params(const Document& doc);
plant::ConverterParams load_params(const std::string& path);
void write_params(const plant::ConverterParams& p, std::ostream& out);

// --- controllers --------------------------------------------------------------------------
// Either `preset = <name>` with optional pu tuning entries, or an explicit
// grid `phi.<row>.<col> = <element>` with rows iu wu Eu and columns
// vdc p wu q V. Elements: `0`, or a product of factors KIND(k, T, xi) joined
// by `*`, optionally followed by `| <product>` acting on the measurement
// only. Example: `phi.wu.p = P(0.01) | IF(-0.01, 0.12) * D(1, 0.12) pu`.

struct ControllerFile {
  std::string name;
  std::string preset;                  // empty for an explicit grid
  controllers::Tuning tuning;          // overrides of the preset defaults
  std::optional<controllers::PhiSpec> grid;

  /// Throws DomainError for unknown presets or invalid elements.
  controllers::PhiSpec build(const plant::ConverterParams& p) const;
};

ControllerFile read_controller(const Document& doc);
ControllerFile load_controller(const std::string& path);
void write_controller(const ControllerFile& c, std::ostream& out);
/// Preset file carrying every gain of a MIMO-GFM design.
ControllerFile mimo_file(const controllers::GainVector& k, const std::string& name = "mimo-gfm");

std::string format_element(const controllers::Element& e);
controllers::Element parse_element(const std::string& text);

// --- scenarios ----------------------------------------------------------------------------
// Optional `preset = pref_step|wg_step` as the starting point, then
// duration dt record_dt (si), Pref Qref Vref Vdcref omega_g Vg (pu), and
// any number of `event = <time> <quantity> <value> pu`, time in seconds.
// An initial omega_g also sets the frequency reference.

simkit::Scenario read_scenario(const Document& doc);
simkit::Scenario load_scenario(const std::string& path);
void write_scenario(const simkit::Scenario& s, std::ostream& out);

/// Text of a writer call, for manifests.
template <typename T, typename Writer>
std::string to_text(const T& value, Writer w);

/// %.17g
std::string number(double v);

}  // namespace gfm::config

#include <sstream>

template <typename T, typename Writer>
std::string gfm::config::to_text(const T& value, Writer w) {
  std::ostringstream os;
  w(value, os);
  return os.str();
}
