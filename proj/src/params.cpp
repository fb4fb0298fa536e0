#include "fedcast/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fedcast::nn {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'C', 'P', 'V'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

void put_string(std::vector<std::uint8_t>& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CorruptBuffer("parameter buffer truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t TensorSpec::size() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::size_t Layout::add(std::string name, std::vector<std::size_t> shape) {
  TensorSpec t{std::move(name), std::move(shape), total_};
  total_ += t.size();
  tensors_.push_back(std::move(t));
  return tensors_.back().offset;
}

const TensorSpec& Layout::tensor(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw InvalidArgument("layout has no tensor '" + name + "'");
}

ParameterVector::ParameterVector(Layout layout) : layout_(std::move(layout)), values_(layout_.total_size(), 0.0) {}

ParameterVector::ParameterVector(Layout layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(values.begin(), values.end()) {
  if (values_.size() != layout_.total_size()) {
    throw DimensionMismatch("parameter values do not match layout size");
  }
}

std::span<double> ParameterVector::tensor(const std::string& name) {
  const auto& t = layout_.tensor(name);
  return std::span<double>(values_).subspan(t.offset, t.size());
}

std::span<const double> ParameterVector::tensor(const std::string& name) const {
  const auto& t = layout_.tensor(name);
  return std::span<const double>(values_).subspan(t.offset, t.size());
}

bool ParameterVector::bit_equal(const ParameterVector& other) const {
  return layout_ == other.layout_ && values_.size() == other.values_.size() &&
         (values_.empty() || std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0);
}

void require_same_layout(const ParameterVector& a, const ParameterVector& b, const char* what) {
  if (a.size() != b.size() || !(a.layout() == b.layout())) {
    throw DimensionMismatch(std::string(what) + ": parameter layouts differ");
  }
}

std::size_t header_bytes(const Layout& layout) {
  std::size_t n = 4 + 4 + 4 + layout.tag().size() + 4;
  for (const auto& t : layout.tensors()) n += 4 + t.name.size() + 4 + 8 * t.shape.size();
  return n + 8;
}

std::size_t serialized_size(const Layout& layout) { return header_bytes(layout) + 8 * layout.total_size(); }

std::vector<std::uint8_t> serialize_params(const ParameterVector& params) {
  const auto& layout = params.layout();
  std::vector<std::uint8_t> out;
  out.reserve(serialized_size(layout));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kVersion);
  put_string(out, layout.tag());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(layout.tensors().size()));
  for (const auto& t : layout.tensors()) {
    put_string(out, t.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, d);
  }
  put<std::uint64_t>(out, params.size());
  for (double v : params.values()) put<double>(out, v);
  return out;
}

ParameterVector deserialize_params(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CorruptBuffer("parameter buffer has no FCPV magic");
  }
  Reader r(bytes.subspan(4));
  if (r.get<std::uint32_t>() != kVersion) throw CorruptBuffer("unsupported parameter buffer version");
  Layout layout(r.get_string());
  const auto n_tensors = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = r.get_string();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 16) throw CorruptBuffer("implausible tensor rank");
    std::vector<std::size_t> shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    layout.add(std::move(name), std::move(shape));
  }
  const auto n_values = r.get<std::uint64_t>();
  if (n_values != layout.total_size()) throw CorruptBuffer("value count disagrees with layout");
  if (r.remaining() != 8 * n_values) throw CorruptBuffer("payload length disagrees with value count");
  std::vector<double> values(n_values);
  for (auto& v : values) v = r.get<double>();
  return ParameterVector(std::move(layout), std::move(values));
}

ParameterVector deserialize_params(std::span<const std::uint8_t> bytes, const Layout& expected) {
  auto params = deserialize_params(bytes);
  if (!(params.layout() == expected)) throw CorruptBuffer("parameter buffer layout differs from expected layout");
  return params;
}

void save_checkpoint(const std::string& path, const ParameterVector& params) {
  const auto bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileNotFound("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParameterVector load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

}  // namespace fedcast::nn
