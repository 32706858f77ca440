#include "gfm/config.hpp"

#include "gfm/errors.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

namespace gfm::config {

using controllers::Element;
using controllers::ElementKind;
using controllers::Factor;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const Document& doc, const Entry& e, const std::string& msg) {
  throw ConfigError(doc.source + ":" + std::to_string(e.line) + ": " + msg);
}

double to_double(const std::string& text, const std::string& what) {
  const auto s = trim(text);
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v)) {
    throw ConfigError(what + ": '" + s + "' is not a finite number");
  }
  return v;
}

double numeric(const Document& doc, const Entry& e) {
  try {
    return to_double(e.value, e.key);
  } catch (const ConfigError& err) {
    fail(doc, e, err.what());
  }
}

void require_unit(const Document& doc, const Entry& e, std::initializer_list<const char*> allowed) {
  for (const char* u : allowed) {
    if (e.unit == u) return;
  }
  std::string list;
  for (const char* u : allowed) list += (list.empty() ? "" : " or ") + std::string(u);
  fail(doc, e, "'" + e.key + "' needs unit tag " + list);
}

void no_unit(const Document& doc, const Entry& e) {
  if (!e.unit.empty()) fail(doc, e, "'" + e.key + "' takes no unit tag");
}

/// Rejects repeated keys except those listed.
void check_duplicates(const Document& doc, std::initializer_list<const char*> repeatable = {}) {
  std::set<std::string> seen;
  for (const auto& e : doc.entries) {
    const bool rep = std::any_of(repeatable.begin(), repeatable.end(),
                                 [&](const char* k) { return e.key == k; });
    if (!rep && !seen.insert(e.key).second) fail(doc, e, "duplicate key '" + e.key + "'");
  }
}

const std::array<std::string, 3> kRows{"iu", "wu", "Eu"};
const std::array<std::string, 5> kCols{"vdc", "p", "wu", "q", "V"};

}  // namespace

std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<const Entry*> Document::all(const std::string& key) const {
  std::vector<const Entry*> out;
  for (const auto& e : entries) {
    if (e.key == key) out.push_back(&e);
  }
  return out;
}

Document parse(std::istream& in, const std::string& source) {
  Document doc;
  doc.source = source;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const auto text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line) + ": expected 'key = value'");
    }
    Entry e;
    e.line = line;
    e.key = trim(text.substr(0, eq));
    auto value = trim(text.substr(eq + 1));
    if (e.key.empty() || value.empty()) {
      throw ConfigError(source + ":" + std::to_string(line) + ": empty key or value");
    }
    const auto sp = value.find_last_of(" \t");
    if (sp != std::string::npos) {
      const auto tag = value.substr(sp + 1);
      if (tag == "si" || tag == "pu") {
        e.unit = tag;
        value = trim(value.substr(0, sp));
      }
    } else if (value == "si" || value == "pu") {
      throw ConfigError(source + ":" + std::to_string(line) + ": unit tag without a value");
    }
    e.value = value;
    doc.entries.push_back(std::move(e));
  }
  return doc;
}

Document load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  return parse(in, path);
}

// --- parameters ---------------------------------------------------------------------------

plant::ConverterParams read_params(const Document& doc) {
  check_duplicates(doc);
  auto si = plant::reference_si();
  std::map<std::string, double> pu;

  std::map<std::string, double*> base{{"Sn", &si.base.Sn},
                                      {"Vn", &si.base.Vn},
                                      {"Vdc_base", &si.base.Vdc_base},
                                      {"omega_n", &si.base.omega_n}};
  std::map<std::string, double*> either{{"Lf", &si.Lf}, {"Cf", &si.Cf},   {"Lg", &si.Lg},
                                        {"Rg", &si.Rg}, {"Rf", &si.Rf},   {"Cdc", &si.Cdc}};
  std::map<std::string, double*> pu_only{{"Dp", &si.Dp}, {"Dq", &si.Dq}, {"Vg", &si.Vg}};

  for (const auto& e : doc.entries) {
    if (e.key == "include_rf") {
      no_unit(doc, e);
      if (e.value == "true") si.include_rf = true;
      else if (e.value == "false") si.include_rf = false;
      else fail(doc, e, "include_rf must be true or false");
    } else if (auto b = base.find(e.key); b != base.end()) {
      require_unit(doc, e, {"si"});
      *b->second = numeric(doc, e);
    } else if (auto m = either.find(e.key); m != either.end()) {
      require_unit(doc, e, {"si", "pu"});
      if (e.unit == "si") *m->second = numeric(doc, e);
      else pu[e.key] = numeric(doc, e);
    } else if (auto d = pu_only.find(e.key); d != pu_only.end()) {
      require_unit(doc, e, {"pu"});
      *d->second = numeric(doc, e);
    } else {
      fail(doc, e, "unknown parameter '" + e.key + "'");
    }
  }

  try {
    auto p = plant::per_unit_convert(si);
    for (const auto& [k, v] : pu) {
      if (k == "Lf") p.Lf = v;
      else if (k == "Cf") p.Cf = v;
      else if (k == "Lg") p.Lg = v;
      else if (k == "Rg") p.Rg = v;
      else if (k == "Rf") p.Rf = v;
      else if (k == "Cdc") p.Cdc = v;
    }
    p.validate();
    return p;
  } catch (const DomainError& err) {
    throw ConfigError(doc.source + ": " + err.what());
  }
}

plant::ConverterParams load_params(const std::string& path) { return read_params(load(path)); }

void write_params(const plant::ConverterParams& p, std::ostream& out) {
  out << "# converter parameters\n";
  out << "Sn = " << number(p.base.Sn) << " si\n";
  out << "Vn = " << number(p.base.Vn) << " si\n";
  out << "Vdc_base = " << number(p.base.Vdc_base) << " si\n";
  out << "omega_n = " << number(p.base.omega_n) << " si\n";
  out << "Lf = " << number(p.Lf) << " pu\n";
  out << "Cf = " << number(p.Cf) << " pu\n";
  out << "Lg = " << number(p.Lg) << " pu\n";
  out << "Rg = " << number(p.Rg) << " pu\n";
  out << "Rf = " << number(p.Rf) << " pu\n";
  out << "Cdc = " << number(p.Cdc) << " pu\n";
  out << "Dp = " << number(p.Dp) << " pu\n";
  out << "Dq = " << number(p.Dq) << " pu\n";
  out << "Vg = " << number(p.Vg) << " pu\n";
  out << "include_rf = " << (p.include_rf ? "true" : "false") << "\n";
}

// --- elements -----------------------------------------------------------------------------

namespace {

std::string format_product(const std::vector<Factor>& fs) {
  std::string s;
  for (const auto& f : fs) {
    if (!s.empty()) s += " * ";
    s += controllers::to_string(f.kind) + "(" + number(f.params.k);
    if (f.kind != ElementKind::P) s += ", " + number(f.params.T);
    if (f.kind == ElementKind::O) s += ", " + number(f.params.xi);
    s += ")";
  }
  return s;
}

std::vector<Factor> parse_product(const std::string& text) {
  std::vector<Factor> out;
  size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find('(', pos);
    const auto close = text.find(')', pos);
    if (open == std::string::npos || close == std::string::npos || close < open) {
      throw ConfigError("malformed element factor in '" + text + "'");
    }
    Factor f;
    try {
      f.kind = controllers::parse_kind(trim(text.substr(pos, open - pos)));
    } catch (const DomainError& e) {
      throw ConfigError(e.what());
    }
    std::vector<double> args;
    std::string inner = text.substr(open + 1, close - open - 1);
    size_t a = 0;
    while (true) {
      const auto comma = inner.find(',', a);
      args.push_back(to_double(inner.substr(a, comma - a), "element argument"));
      if (comma == std::string::npos) break;
      a = comma + 1;
    }
    const size_t want = f.kind == ElementKind::P ? 1 : f.kind == ElementKind::O ? 3 : 2;
    if (f.kind == ElementKind::Zero || args.size() != want) {
      throw ConfigError(controllers::to_string(f.kind) + " takes " + std::to_string(want) +
                        " argument(s)");
    }
    f.params.k = args[0];
    if (want > 1) f.params.T = args[1];
    if (want > 2) f.params.xi = args[2];
    out.push_back(f);

    pos = text.find_first_not_of(" \t", close + 1);
    if (pos == std::string::npos) break;
    if (text[pos] != '*') throw ConfigError("expected '*' between factors in '" + text + "'");
    ++pos;
  }
  if (out.empty()) throw ConfigError("empty element product");
  return out;
}

}  // namespace

std::string format_element(const Element& e) {
  if (e.is_zero()) return "0";
  std::string s = e.factors().empty() ? "0" : format_product(e.factors());
  if (e.has_feedback_only()) s += " | " + format_product(e.feedback_only());
  return s;
}

Element parse_element(const std::string& text) {
  const auto bar = text.find('|');
  const auto main = trim(text.substr(0, bar));
  std::vector<Factor> fb;
  if (bar != std::string::npos) fb = parse_product(trim(text.substr(bar + 1)));
  std::vector<Factor> f;
  if (main != "0") f = parse_product(main);
  return Element(std::move(f), std::move(fb));
}

// --- controllers --------------------------------------------------------------------------

controllers::PhiSpec ControllerFile::build(const plant::ConverterParams& p) const {
  controllers::PhiSpec s;
  if (grid) {
    s = *grid;
  } else {
    auto t = controllers::default_tuning(preset, p);
    for (const auto& [k, v] : tuning) {
      if (!t.count(k)) throw DomainError("preset '" + preset + "' has no tuning value '" + k + "'");
      t[k] = v;
    }
    s = controllers::preset(preset, p, t);
  }
  if (!name.empty()) s.name = name;
  s.validate();
  return s;
}

ControllerFile read_controller(const Document& doc) {
  check_duplicates(doc);
  ControllerFile c;
  controllers::PhiSpec grid;
  bool any_grid = false, has_dp = false, has_dq = false;
  for (const auto& e : doc.entries) {
    if (e.key == "name") {
      no_unit(doc, e);
      c.name = e.value;
    } else if (e.key == "preset") {
      no_unit(doc, e);
      c.preset = e.value;
    } else if (e.key == "Dp" || e.key == "Dq") {
      require_unit(doc, e, {"pu"});
      (e.key == "Dp" ? grid.Dp : grid.Dq) = numeric(doc, e);
      (e.key == "Dp" ? has_dp : has_dq) = true;
    } else if (e.key.rfind("phi.", 0) == 0) {
      const auto dot = e.key.find('.', 4);
      const auto row = e.key.substr(4, dot == std::string::npos ? std::string::npos : dot - 4);
      const auto col = dot == std::string::npos ? "" : e.key.substr(dot + 1);
      const auto r = std::find(kRows.begin(), kRows.end(), row);
      const auto k = std::find(kCols.begin(), kCols.end(), col);
      if (r == kRows.end() || k == kCols.end()) fail(doc, e, "bad grid key '" + e.key + "'");
      if (e.value != "0") require_unit(doc, e, {"pu"});
      try {
        grid.at(static_cast<int>(r - kRows.begin()), static_cast<int>(k - kCols.begin())) =
            parse_element(e.value);
      } catch (const ConfigError& err) {
        fail(doc, e, err.what());
      }
      any_grid = true;
    } else {
      // Anything else is a preset tuning value.
      require_unit(doc, e, {"pu"});
      c.tuning[e.key] = numeric(doc, e);
    }
  }
  // Dp/Dq alone describe the all-zero grid.
  any_grid = any_grid || has_dp || has_dq;
  if (any_grid == !c.preset.empty()) {
    throw ConfigError(doc.source + ": give either 'preset' or a 'phi.*' grid");
  }
  if (any_grid) {
    if (!c.tuning.empty()) throw ConfigError(doc.source + ": tuning values need a preset");
    if (!has_dp || !has_dq) throw ConfigError(doc.source + ": a grid needs Dp and Dq");
    grid.name = c.name.empty() ? "custom" : c.name;
    try {
      grid.validate();
    } catch (const DomainError& err) {
      throw ConfigError(doc.source + ": " + err.what());
    }
    c.grid = grid;
  } else {
    const auto names = controllers::preset_names();
    if (std::find(names.begin(), names.end(), c.preset) == names.end()) {
      throw ConfigError(doc.source + ": unknown preset '" + c.preset + "'");
    }
  }
  return c;
}

ControllerFile load_controller(const std::string& path) { return read_controller(load(path)); }

void write_controller(const ControllerFile& c, std::ostream& out) {
  out << "# controller\n";
  if (!c.name.empty()) out << "name = " << c.name << "\n";
  if (c.grid) {
    out << "Dp = " << number(c.grid->Dp) << " pu\n";
    out << "Dq = " << number(c.grid->Dq) << " pu\n";
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 5; ++j) {
        const auto& e = c.grid->at(i, j);
        out << "phi." << kRows[i] << "." << kCols[j] << " = " << format_element(e)
            << (e.is_zero() ? "" : " pu") << "\n";
      }
    }
    return;
  }
  out << "preset = " << c.preset << "\n";
  for (const auto& [k, v] : c.tuning) out << k << " = " << number(v) << " pu\n";
}

ControllerFile mimo_file(const controllers::GainVector& k, const std::string& name) {
  ControllerFile c;
  c.name = name;
  c.preset = "mimo-gfm";
  const auto a = k.to_array();
  for (size_t i = 0; i < a.size(); ++i) c.tuning[controllers::GainVector::names()[i]] = a[i];
  return c;
}

// --- scenarios ----------------------------------------------------------------------------

simkit::Scenario read_scenario(const Document& doc) {
  check_duplicates(doc, {"event"});
  simkit::Scenario s;
  if (const auto p = doc.all("preset"); !p.empty()) {
    no_unit(doc, *p[0]);
    try {
      s = simkit::scenario_preset(p[0]->value);
    } catch (const DomainError& err) {
      fail(doc, *p[0], err.what());
    }
  }
  bool events_given = false;
  for (const auto& e : doc.entries) {
    if (e.key == "preset") continue;
    if (e.key == "name") {
      no_unit(doc, e);
      s.name = e.value;
    } else if (e.key == "duration" || e.key == "dt" || e.key == "record_dt") {
      require_unit(doc, e, {"si"});
      const double v = numeric(doc, e);
      (e.key == "duration" ? s.duration : e.key == "dt" ? s.dt : s.record_dt) = v;
    } else if (e.key == "event") {
      require_unit(doc, e, {"pu"});
      if (!events_given) s.events.clear();  // file events replace the preset's
      events_given = true;
      std::istringstream is(e.value);
      std::string t, q, v, extra;
      if (!(is >> t >> q >> v) || (is >> extra)) fail(doc, e, "event needs '<time> <quantity> <value>'");
      simkit::Event ev;
      try {
        ev.time = to_double(t, "event time");
        ev.quantity = simkit::parse_quantity(q);
        ev.value = to_double(v, "event value");
      } catch (const Error& err) {
        fail(doc, e, err.what());
      }
      s.events.push_back(ev);
    } else {
      require_unit(doc, e, {"pu"});
      const double v = numeric(doc, e);
      auto& y = s.setpoints.yref;
      if (e.key == "Pref") y.Pref = v;
      else if (e.key == "Qref") y.Qref = v;
      else if (e.key == "Vref") y.Vref = v;
      else if (e.key == "Vdcref") y.Vdcref = v;
      else if (e.key == "omega_g") {
        s.disturbance.omega_g = v;
        y.omega_g_ref = v;
      } else if (e.key == "Vg") s.disturbance.Vg = v;
      else fail(doc, e, "unknown scenario key '" + e.key + "'");
    }
  }
  try {
    s.validate();
  } catch (const DomainError& err) {
    throw ConfigError(doc.source + ": " + err.what());
  }
  return s;
}

simkit::Scenario load_scenario(const std::string& path) { return read_scenario(load(path)); }

void write_scenario(const simkit::Scenario& s, std::ostream& out) {
  out << "# scenario\n";
  out << "name = " << s.name << "\n";
  out << "duration = " << number(s.duration) << " si\n";
  out << "dt = " << number(s.dt) << " si\n";
  out << "record_dt = " << number(s.record_dt) << " si\n";
  const auto& y = s.setpoints.yref;
  out << "Pref = " << number(y.Pref) << " pu\n";
  out << "Qref = " << number(y.Qref) << " pu\n";
  out << "Vref = " << number(y.Vref) << " pu\n";
  out << "Vdcref = " << number(y.Vdcref) << " pu\n";
  out << "omega_g = " << number(s.disturbance.omega_g) << " pu\n";
  out << "Vg = " << number(s.disturbance.Vg) << " pu\n";
  for (const auto& e : s.events) {
    out << "event = " << number(e.time) << " " << simkit::to_string(e.quantity) << " "
        << number(e.value) << " pu\n";
  }
}

}  // namespace gfm::config
