#include <fstream>
#include <iterator>

#include "sphereat/datahub/dataset.hpp"

namespace sphereat {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset, std::string_view what) {
  if (offset + 4 > bytes.size()) {
    throw ParseError(std::string(what) + ": truncated header at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void expect_magic(std::span<const unsigned char> bytes, std::uint32_t magic, std::string_view what) {
  const auto got = read_be32(bytes, 0, what);
  if (got != magic) {
    throw ParseError(std::string(what) + ": bad magic at byte offset 0 (expected " + std::to_string(magic) +
                     ", got " + std::to_string(got) + ")");
  }
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Dataset parse_idx(std::span<const unsigned char> images, std::span<const unsigned char> labels,
                  std::size_t num_classes) {
  expect_magic(images, kImageMagic, "images");
  const std::size_t n = read_be32(images, 4, "images");
  const std::size_t rows = read_be32(images, 8, "images");
  const std::size_t cols = read_be32(images, 12, "images");
  expect_magic(labels, kLabelMagic, "labels");
  const std::size_t nl = read_be32(labels, 4, "labels");
  if (n != nl) {
    throw ParseError("labels: count " + std::to_string(nl) + " at byte offset 4 disagrees with image count " +
                     std::to_string(n));
  }
  if (n == 0 || rows == 0 || cols == 0) throw ParseError("images: zero extent in header at byte offset 4");
  const std::size_t pixels = n * rows * cols;
  if (images.size() < 16 + pixels) {
    throw ParseError("images: truncated pixel data at byte offset " + std::to_string(images.size()) + " (expected " +
                     std::to_string(16 + pixels) + " bytes)");
  }
  if (labels.size() < 8 + n) {
    throw ParseError("labels: truncated label data at byte offset " + std::to_string(labels.size()) + " (expected " +
                     std::to_string(8 + n) + " bytes)");
  }

  Dataset d{diff::Tensor(diff::Shape{n, rows, cols}), Labels(n), "idx", "", num_classes};
  auto& px = d.inputs.storage();
  for (std::size_t i = 0; i < pixels; ++i) px[i] = static_cast<double>(images[16 + i]) / 255.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[8 + i];
    if (static_cast<std::size_t>(y) >= num_classes) {
      throw ParseError("labels: value " + std::to_string(y) + " at byte offset " + std::to_string(8 + i) +
                       " exceeds class count " + std::to_string(num_classes));
    }
    d.labels[i] = y;
  }
  return d;
}

Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t num_classes) {
  const auto ib = slurp(images);
  const auto lb = slurp(labels);
  try {
    Dataset d = parse_idx(ib, lb, num_classes);
    d.name = images.parent_path().filename().string();
    return d;
  } catch (const ParseError& e) {
    throw ParseError(images.filename().string() + " / " + labels.filename().string() + ": " + e.what());
  }
}

Dataset load_mnist_dir(const std::filesystem::path& dir, std::string_view split) {
  if (split != "train" && split != "test") throw ContractViolation("MNIST split must be train or test");
  const std::string s(split);
  Dataset d = load_idx_images(dir / (s + "-images-idx3-ubyte"), dir / (s + "-labels-idx1-ubyte"));
  d.split = s;
  return d;
}

}  // namespace sphereat
