#include "sphereat/datahub/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "sphereat/diffcore/rng.hpp"
#include "sphereat/kv.hpp"

namespace sphereat {

using diff::Shape;
using diff::Tensor;

void Dataset::validate() const {
  if (inputs.rank() < 2) throw ContractViolation("dataset inputs need a batch axis and a feature axis");
  if (inputs.dim(0) != labels.size()) {
    throw ContractViolation("dataset has " + std::to_string(inputs.dim(0)) + " inputs but " +
                            std::to_string(labels.size()) + " labels");
  }
  for (double v : inputs.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractViolation("dataset input outside [0, 1]");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw ContractViolation("dataset label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows) const {
  Dataset d{diff::gather_rows(inputs, rows), {}, name, split, num_classes};
  d.labels.reserve(rows.size());
  for (auto r : rows) d.labels.push_back(labels.at(r));
  return d;
}

Dataset Dataset::head(std::size_t n) const {
  if (n >= size()) return *this;
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return subset(rows);
}

Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n == 0 || n % 2 != 0) throw ContractViolation("make_two_moons: n must be even and positive, got " + std::to_string(n));
  if (!(noise >= 0.0)) throw ContractViolation("make_two_moons: noise must be >= 0");
  Rng rng(derive_seed(seed, "two-moons"));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);

  Dataset d{Tensor(Shape{n, 2}), Labels(n), "two-moons", "train", 2};
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t slot = order[k];
    const int cls = k < n / 2 ? 0 : 1;
    const double t = rng.uniform(0.0, std::numbers::pi);
    double ax = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double ay = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
    if (noise > 0.0) {
      ax += noise * rng.normal();
      ay += noise * rng.normal();
    }
    d.inputs.at(slot, 0) = std::clamp((ax - kMoonsOriginX) * kMoonsScale, 0.0, 1.0);
    d.inputs.at(slot, 1) = std::clamp((ay - kMoonsOriginY) * kMoonsScale, 0.0, 1.0);
    d.labels[slot] = cls;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Batching

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t shuffle_seed)
    : data_(&data), batch_size_(batch_size), order_(data.size()) {
  if (batch_size == 0) throw ContractViolation("batch size must be >= 1");
  if (data.size() == 0) throw ContractViolation("cannot batch an empty dataset");
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  Rng rng(derive_seed(shuffle_seed, "batches"));
  rng.shuffle(order_);
}

bool BatchIterator::next(Batch& out) {
  if (pos_ >= order_.size()) return false;
  const auto end = std::min(order_.size(), pos_ + batch_size_);
  out.rows.assign(order_.begin() + static_cast<std::ptrdiff_t>(pos_), order_.begin() + static_cast<std::ptrdiff_t>(end));
  out.x = diff::gather_rows(data_->inputs, out.rows);
  out.y.clear();
  for (auto r : out.rows) out.y.push_back(data_->labels[r]);
  pos_ = end;
  return true;
}

std::vector<Batch> batches(const Dataset& data, std::size_t batch_size, std::uint64_t shuffle_seed) {
  BatchIterator it(data, batch_size, shuffle_seed);
  std::vector<Batch> out;
  Batch b;
  while (it.next(b)) out.push_back(b);
  return out;
}

// ---------------------------------------------------------------------------
// Archive export

TensorArchive export_dataset(const Dataset& data) {
  TensorArchive a;
  std::ostringstream h;
  h << "content = dataset\n"
    << "name = " << data.name << "\n"
    << "split = " << data.split << "\n"
    << "num_classes = " << data.num_classes << "\n";
  a.header = h.str();
  std::vector<double> labels(data.labels.begin(), data.labels.end());
  a.tensors.push_back({"inputs", data.inputs});
  const Shape label_shape{labels.size()};
  a.tensors.push_back({"labels", Tensor(label_shape, std::move(labels))});
  return a;
}

Dataset import_dataset(const TensorArchive& archive) {
  Dataset d;
  bool is_dataset = false;
  for (const auto& e : parse_kv(archive.header)) {
    if (e.key == "content") is_dataset = e.value == "dataset";
    else if (e.key == "name") d.name = e.value;
    else if (e.key == "split") d.split = e.value;
    else if (e.key == "num_classes") d.num_classes = static_cast<std::size_t>(parse_int(e.value));
  }
  if (!is_dataset) throw ParseError("archive does not hold a dataset");
  if (archive.tensors.size() != 2 || archive.tensors[0].name != "inputs" || archive.tensors[1].name != "labels") {
    throw ParseError("dataset archive must hold 'inputs' and 'labels'");
  }
  d.inputs = archive.tensors[0].value;
  for (double v : archive.tensors[1].value.data()) {
    if (v != std::floor(v)) throw ParseError("dataset archive has a non-integer label");
    d.labels.push_back(static_cast<int>(v));
  }
  d.validate();
  return d;
}

}  // namespace sphereat
