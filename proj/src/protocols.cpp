#include "ibws/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ibws/io.hpp"

namespace ibws {

namespace {

const char* scale_name(Scale s) {
  switch (s) {
    case Scale::ordinal7: return "ordinal7";
    case Scale::slider: return "slider";
    case Scale::vas: return "vas";
  }
  return "?";
}

bool in_unit(double v) { return v >= 0.0 && v <= 1.0; }

}  // namespace

std::string ProtocolKind::name() const {
  return std::string(arity == Arity::single ? "single_" : "dual_") + scale_name(scale);
}

ProtocolKind ProtocolKind::parse(const std::string& name) {
  for (const auto& p : all()) {
    if (p.name() == name) return p;
  }
  throw ProtocolError("unknown protocol '" + name + "'");
}

std::vector<ProtocolKind> ProtocolKind::all() {
  std::vector<ProtocolKind> out;
  for (Arity a : {Arity::single, Arity::dual}) {
    for (Scale s : {Scale::ordinal7, Scale::slider, Scale::vas}) out.push_back({a, s});
  }
  return out;
}

void validate(const ScalarResponse& resp) {
  if (!(resp.duration >= 0.0) || !std::isfinite(resp.duration)) {
    throw ProtocolError("duration must be a finite non-negative number");
  }
  const auto& p = resp.protocol;
  if (p.arity == Arity::dual) {
    const auto* d = std::get_if<DualRating>(&resp.raw);
    if (!d) throw ProtocolError(p.name() + " expects a polarity/magnitude answer");
    if (d->polarity == Polarity::neutral) {
      if (d->magnitude) throw ProtocolError("neutral answer carries no magnitude");
    } else if (!d->magnitude || !in_unit(*d->magnitude)) {
      throw ProtocolError("polar answer needs a magnitude in [0,1]");
    }
    return;
  }
  switch (p.scale) {
    case Scale::ordinal7: {
      const auto* o = std::get_if<OrdinalLabel>(&resp.raw);
      if (!o) throw ProtocolError(p.name() + " expects an ordinal label");
      if (o->label < 1 || o->label > 7) throw ProtocolError("ordinal label outside 1..7");
      return;
    }
    case Scale::slider: {
      const auto* s = std::get_if<SliderPosition>(&resp.raw);
      if (!s) throw ProtocolError(p.name() + " expects a slider position");
      if (s->value < 0 || s->value > 100) throw ProtocolError("slider value outside 0..100");
      return;
    }
    case Scale::vas: {
      const auto* v = std::get_if<VasPosition>(&resp.raw);
      if (!v) throw ProtocolError(p.name() + " expects a VAS position");
      if (!in_unit(v->value)) throw ProtocolError("VAS position outside [0,1]");
      return;
    }
  }
}

double to_unit_scale(const ScalarResponse& resp) {
  validate(resp);
  return std::visit(
      [](const auto& raw) -> double {
        using T = std::decay_t<decltype(raw)>;
        if constexpr (std::is_same_v<T, OrdinalLabel>) {
          return (raw.label - 1) / 6.0;
        } else if constexpr (std::is_same_v<T, SliderPosition>) {
          return raw.value / 100.0;
        } else if constexpr (std::is_same_v<T, VasPosition>) {
          return raw.value;
        } else {
          switch (raw.polarity) {
            case Polarity::neutral: return 0.5;
            case Polarity::positive: return 0.5 + *raw.magnitude / 2.0;
            case Polarity::negative: return 0.5 - *raw.magnitude / 2.0;
          }
          return 0.5;
        }
      },
      resp.raw);
}

double aggregate(std::span<const double> values) {
  if (values.empty()) throw ProtocolError("cannot aggregate an empty list");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

std::string encode_raw(const RawAnswer& raw) {
  return std::visit(
      [](const auto& r) -> std::string {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, OrdinalLabel>) {
          return std::to_string(r.label);
        } else if constexpr (std::is_same_v<T, SliderPosition>) {
          return std::to_string(r.value);
        } else if constexpr (std::is_same_v<T, VasPosition>) {
          return format_double(r.value);
        } else {
          if (r.polarity == Polarity::neutral) return "neutral";
          std::string s = r.polarity == Polarity::positive ? "positive:" : "negative:";
          return s + format_double(r.magnitude.value_or(0.0));
        }
      },
      raw);
}

RawAnswer decode_raw(const ProtocolKind& protocol, const std::string& text) {
  try {
    if (protocol.arity == Arity::dual) {
      if (text == "neutral") return DualRating{Polarity::neutral, std::nullopt};
      auto colon = text.find(':');
      if (colon == std::string::npos) throw ProtocolError("bad dual answer '" + text + "'");
      std::string pol = text.substr(0, colon);
      double m = parse_double(text.substr(colon + 1));
      if (pol == "positive") return DualRating{Polarity::positive, m};
      if (pol == "negative") return DualRating{Polarity::negative, m};
      throw ProtocolError("bad polarity '" + pol + "'");
    }
    switch (protocol.scale) {
      case Scale::ordinal7: return OrdinalLabel{static_cast<int>(parse_int(text))};
      case Scale::slider: return SliderPosition{static_cast<int>(parse_int(text))};
      case Scale::vas: return VasPosition{parse_double(text)};
    }
  } catch (const FormatError& e) {
    throw ProtocolError(e.what());
  }
  throw ProtocolError("unreachable protocol scale");
}

std::vector<ScalarResponse> load_responses(const std::filesystem::path& path) {
  Table t = read_table(path);
  int item = t.require_column("item_id");
  int worker = t.require_column("worker_id");
  int proto = t.require_column("protocol");
  int raw = t.require_column("raw");
  int dur = t.require_column("duration_sec");
  int hit = t.column("hit_id");
  std::vector<ScalarResponse> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    try {
      ScalarResponse s;
      s.item_id = r[item];
      s.worker_id = r[worker];
      s.protocol = ProtocolKind::parse(r[proto]);
      s.raw = decode_raw(s.protocol, r[raw]);
      s.duration = parse_double(r[dur]);
      if (hit >= 0) s.hit_id = r[hit];
      validate(s);
      out.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ": row " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return out;
}

void save_responses(const std::filesystem::path& path, std::span<const ScalarResponse> rows) {
  Table t;
  t.header = {"item_id", "worker_id", "protocol", "raw", "duration_sec", "hit_id"};
  for (const auto& r : rows) {
    t.rows.push_back({r.item_id, r.worker_id, r.protocol.name(), encode_raw(r.raw),
                      format_double(r.duration), r.hit_id});
  }
  write_table(path, t);
}

std::vector<double> RatingsMatrix::present(std::size_t row) const {
  std::vector<double> out;
  for (const auto& c : cells[row]) {
    if (c) out.push_back(*c);
  }
  return out;
}

bool RatingsMatrix::is_complete() const {
  for (const auto& r : cells) {
    for (const auto& c : r) {
      if (!c) return false;
    }
  }
  return true;
}

RatingsMatrix RatingsMatrix::complete_rows() const {
  RatingsMatrix out;
  out.col_ids = col_ids;
  for (std::size_t i = 0; i < rows(); ++i) {
    if (std::all_of(cells[i].begin(), cells[i].end(), [](const auto& c) { return c.has_value(); })) {
      out.row_ids.push_back(row_ids[i]);
      out.cells.push_back(cells[i]);
    }
  }
  return out;
}

RatingsMatrix matrix_by_slot(std::span<const ScalarResponse> responses) {
  std::map<std::string, std::size_t> row_of;
  RatingsMatrix m;
  std::vector<std::vector<double>> values;
  for (const auto& r : responses) {
    auto [it, inserted] = row_of.emplace(r.item_id, m.row_ids.size());
    if (inserted) {
      m.row_ids.push_back(r.item_id);
      values.emplace_back();
    }
    values[it->second].push_back(to_unit_scale(r));
  }
  std::size_t k = 0;
  for (const auto& v : values) k = std::max(k, v.size());
  for (std::size_t j = 0; j < k; ++j) m.col_ids.push_back("r" + std::to_string(j + 1));
  for (const auto& v : values) {
    std::vector<std::optional<double>> row(k);
    for (std::size_t j = 0; j < v.size(); ++j) row[j] = v[j];
    m.cells.push_back(std::move(row));
  }
  return m;
}

RatingsMatrix matrix_by_worker(std::span<const ScalarResponse> responses) {
  std::map<std::string, std::size_t> row_of;
  std::map<std::string, std::size_t> col_of;
  RatingsMatrix m;
  for (const auto& r : responses) {
    if (row_of.emplace(r.item_id, m.row_ids.size()).second) m.row_ids.push_back(r.item_id);
    if (col_of.emplace(r.worker_id, m.col_ids.size()).second) m.col_ids.push_back(r.worker_id);
  }
  m.cells.assign(m.row_ids.size(), std::vector<std::optional<double>>(m.col_ids.size()));
  for (const auto& r : responses) {
    m.cells[row_of[r.item_id]][col_of[r.worker_id]] = to_unit_scale(r);
  }
  return m;
}

RatingsMatrix load_matrix(const std::filesystem::path& path) {
  Table t = read_table(path);
  int id = t.require_column("item_id");
  RatingsMatrix m;
  std::vector<int> cols;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    if (static_cast<int>(j) == id) continue;
    cols.push_back(static_cast<int>(j));
    m.col_ids.push_back(t.header[j]);
  }
  for (const auto& r : t.rows) {
    m.row_ids.push_back(r[id]);
    std::vector<std::optional<double>> row;
    for (int j : cols) {
      if (r[j].empty()) {
        row.emplace_back();
      } else {
        double v = parse_double(r[j]);
        if (!in_unit(v)) throw FormatError("rating " + r[j] + " outside [0,1]");
        row.emplace_back(v);
      }
    }
    m.cells.push_back(std::move(row));
  }
  return m;
}

void save_matrix(const std::filesystem::path& path, const RatingsMatrix& m) {
  Table t;
  t.header.push_back("item_id");
  for (const auto& c : m.col_ids) t.header.push_back(c);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    CsvRow row{m.row_ids[i]};
    for (const auto& c : m.cells[i]) row.push_back(c ? format_double(*c) : "");
    t.rows.push_back(std::move(row));
  }
  write_table(path, t);
}

}  // namespace ibws
