#pragma once

// Named-field <-> flat decision vector conversion. Optimizers want one flat
// vector; transcription code wants named matrices (states, controls,
// durations). A Layout records field order, shapes and offsets so the two
// views stay interchangeable.

#include <Eigen/Dense>

#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace trajkit {

struct FieldSpec {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
};

// Map of field name to matrix payload. std::map keeps iteration order
// deterministic.
using ValueMap = std::map<std::string, Eigen::MatrixXd>;

class Layout {
 public:
  struct Span {
    Eigen::Index offset = 0;
    Eigen::Index size = 0;  // half-open [offset, offset + size)
    Eigen::Index end() const { return offset + size; }
  };

  Layout() = default;

  // Builds offsets in declaration order. Rejects duplicate names and
  // zero-size fields.
  static Layout build(std::vector<FieldSpec> fields) {
    Layout layout;
    layout.fields_ = std::move(fields);
    layout.offsets_.reserve(layout.fields_.size());
    Eigen::Index offset = 0;
    for (std::size_t i = 0; i < layout.fields_.size(); ++i) {
      const FieldSpec& f = layout.fields_[i];
      if (f.name.empty()) {
        throw std::invalid_argument("layout: field " + std::to_string(i) + " has an empty name");
      }
      if (f.rows < 1 || f.cols < 1) {
        throw std::invalid_argument("layout: field '" + f.name + "' has zero size (" +
                                    std::to_string(f.rows) + "x" + std::to_string(f.cols) + ")");
      }
      if (!layout.index_.emplace(f.name, i).second) {
        throw std::invalid_argument("layout: duplicate field name '" + f.name + "'");
      }
      layout.offsets_.push_back(offset);
      offset += f.size();
    }
    layout.total_ = offset;
    return layout;
  }

  Eigen::Index total_len() const { return total_; }
  const std::vector<FieldSpec>& fields() const { return fields_; }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const FieldSpec& spec_of(const std::string& name) const {
    return fields_[field_index(name)];
  }

  // Half-open index range of a field inside the flat vector.
  Span slice_of(const std::string& name) const {
    const std::size_t i = field_index(name);
    return Span{offsets_[i], fields_[i].size()};
  }

  // Flattens each field column-major (all components at one grid column are
  // contiguous) and concatenates fields in declaration order.
  Eigen::VectorXd pack(const ValueMap& values) const {
    Eigen::VectorXd z(total_);
    for (std::size_t i = 0; i < fields_.size(); ++i) {
      const FieldSpec& f = fields_[i];
      auto it = values.find(f.name);
      if (it == values.end()) {
        throw std::invalid_argument("pack: missing field '" + f.name + "'");
      }
      const Eigen::MatrixXd& m = it->second;
      if (m.rows() != f.rows || m.cols() != f.cols) {
        throw std::invalid_argument(
            "pack: field '" + f.name + "' has shape " + std::to_string(m.rows()) + "x" +
            std::to_string(m.cols()) + ", layout expects " + std::to_string(f.rows) + "x" +
            std::to_string(f.cols));
      }
      z.segment(offsets_[i], f.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), f.size());
    }
    return z;
  }

  // Exact inverse of pack.
  ValueMap unpack(const Eigen::VectorXd& z) const {
    if (z.size() != total_) {
      throw std::invalid_argument("unpack: expected vector of length " + std::to_string(total_) +
                                  ", got " + std::to_string(z.size()));
    }
    ValueMap values;
    for (std::size_t i = 0; i < fields_.size(); ++i) {
      const FieldSpec& f = fields_[i];
      values.emplace(f.name, Eigen::Map<const Eigen::MatrixXd>(z.data() + offsets_[i], f.rows,
                                                               f.cols));
    }
    return values;
  }

  // Matrix view of one field inside a flat vector, no copy.
  Eigen::Map<const Eigen::MatrixXd> view(const Eigen::VectorXd& z, const std::string& name) const {
    check_len(z.size());
    const std::size_t i = field_index(name);
    return {z.data() + offsets_[i], fields_[i].rows, fields_[i].cols};
  }

  Eigen::Map<Eigen::MatrixXd> view(Eigen::VectorXd& z, const std::string& name) const {
    check_len(z.size());
    const std::size_t i = field_index(name);
    return {z.data() + offsets_[i], fields_[i].rows, fields_[i].cols};
  }

 private:
  std::size_t field_index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::invalid_argument("layout: unknown field '" + name + "'");
    }
    return it->second;
  }

  void check_len(Eigen::Index n) const {
    if (n != total_) {
      throw std::invalid_argument("layout: vector of length " + std::to_string(n) +
                                  " does not match total_len " + std::to_string(total_));
    }
  }

  std::vector<FieldSpec> fields_;
  std::vector<Eigen::Index> offsets_;
  std::unordered_map<std::string, std::size_t> index_;
  Eigen::Index total_ = 0;
};

inline Layout layout_build(std::vector<FieldSpec> fields) { return Layout::build(std::move(fields)); }

inline Eigen::VectorXd pack(const Layout& layout, const ValueMap& values) {
  return layout.pack(values);
}

inline ValueMap unpack(const Layout& layout, const Eigen::VectorXd& z) { return layout.unpack(z); }

inline Layout::Span slice_of(const Layout& layout, const std::string& name) {
  return layout.slice_of(name);
}

}  // namespace trajkit
