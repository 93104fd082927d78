#pragma once

// Direct-assessment protocols: single or dual (polarity + magnitude) questions
// on a 7-point ordinal scale, a 0-100 slider, or a visual analog scale.
// Every raw answer maps onto the common [0,1] scale used by IBWS scores.

#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace ibws {

enum class Arity { single, dual };
enum class Scale { ordinal7, slider, vas };

struct ProtocolKind {
  Arity arity = Arity::single;
  Scale scale = Scale::slider;

  bool operator==(const ProtocolKind&) const = default;

  // "single_ordinal7", "dual_vas", ...
  std::string name() const;
  static ProtocolKind parse(const std::string& name);
  static std::vector<ProtocolKind> all();
};

enum class Polarity { positive, negative, neutral };

struct OrdinalLabel {
  int label = 4;  // 1..7
  bool operator==(const OrdinalLabel&) const = default;
};
struct SliderPosition {
  int value = 50;  // 0..100
  bool operator==(const SliderPosition&) const = default;
};
struct VasPosition {
  double value = 0.5;  // click position in [0,1]
  bool operator==(const VasPosition&) const = default;
};
struct DualRating {
  Polarity polarity = Polarity::neutral;
  std::optional<double> magnitude;  // [0,1], absent iff neutral
  bool operator==(const DualRating&) const = default;
};

using RawAnswer = std::variant<OrdinalLabel, SliderPosition, VasPosition, DualRating>;

class ProtocolError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ScalarResponse {
  std::string item_id;
  std::string worker_id;
  ProtocolKind protocol;
  RawAnswer raw;
  double duration = 0.0;  // seconds
  std::string hit_id;     // batch the answer was collected in; may be empty

  bool operator==(const ScalarResponse&) const = default;
};

// Throws ProtocolError when the raw variant does not match the protocol or a
// value is out of range.
void validate(const ScalarResponse& resp);

double to_unit_scale(const ScalarResponse& resp);

// Arithmetic mean; throws on an empty list.
double aggregate(std::span<const double> values);

// Textual raw encodings used in response tables: "5" (ordinal), "73"
// (slider), "0.42" (vas), "positive:0.6" / "negative:0.25" / "neutral".
std::string encode_raw(const RawAnswer& raw);
RawAnswer decode_raw(const ProtocolKind& protocol, const std::string& text);

// Rows {item_id, worker_id, protocol, raw, duration_sec[, hit_id]}.
std::vector<ScalarResponse> load_responses(const std::filesystem::path& path);
void save_responses(const std::filesystem::path& path, std::span<const ScalarResponse> rows);

// Items x raters (or redundant slots); missing cells permitted.
struct RatingsMatrix {
  std::vector<std::string> row_ids;
  std::vector<std::string> col_ids;
  std::vector<std::vector<std::optional<double>>> cells;  // [row][col]

  std::size_t rows() const { return row_ids.size(); }
  std::size_t cols() const { return col_ids.size(); }
  // Non-missing values of one row, in column order.
  std::vector<double> present(std::size_t row) const;
  // Rows with any missing cell removed.
  RatingsMatrix complete_rows() const;
  bool is_complete() const;
};

// Column j holds each item's j-th response in input order.
RatingsMatrix matrix_by_slot(std::span<const ScalarResponse> responses);
// One column per worker; cells missing where the worker did not rate the item.
RatingsMatrix matrix_by_worker(std::span<const ScalarResponse> responses);

// Header: item_id followed by one column per rater; empty cell = missing.
RatingsMatrix load_matrix(const std::filesystem::path& path);
void save_matrix(const std::filesystem::path& path, const RatingsMatrix& m);

}  // namespace ibws
