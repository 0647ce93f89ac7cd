#include "dualuv/tensor_io.hpp"

#include "dualuv/bytes.hpp"
#include "dualuv/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dualuv {

namespace {
constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
}

Tensor::Tensor(DType type, std::vector<std::uint64_t> shape, std::vector<double> data)
    : dtype(type), dims(std::move(shape)), values(std::move(data)) {
  if (values.size() != element_count()) throw Error("tensor payload does not match its dims");
}

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (std::uint64_t d : dims) n *= d;
  return n;
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
  }
  throw Error("unknown dtype");
}

std::string encode_tensor(const Tensor& t) {
  if (t.values.size() != t.element_count()) throw Error("tensor payload does not match its dims");
  if (t.dims.size() > 255) throw Error("tensor rank exceeds 255");
  std::string out(kMagic, 4);
  bytes::put<std::uint32_t>(out, kTensorVersion);
  bytes::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
  bytes::put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
  for (std::uint64_t d : t.dims) bytes::put<std::uint64_t>(out, d);
  out.reserve(out.size() + t.values.size() * dtype_size(t.dtype));
  for (double v : t.values) {
    switch (t.dtype) {
      case DType::kF32: bytes::put<float>(out, static_cast<float>(v)); break;
      case DType::kF64: bytes::put<double>(out, v); break;
      case DType::kU8:
        bytes::put<std::uint8_t>(out, static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))));
        break;
    }
  }
  return out;
}

Tensor decode_tensor(const std::string& data, std::size_t& offset) {
  auto need = [&](std::size_t n) {
    if (data.size() - offset < n) throw IoError("truncated tensor record");
  };
  need(4);
  if (!std::equal(kMagic, kMagic + 4, data.data() + offset)) throw IoError("bad magic");
  offset += 4;
  need(6);
  const auto version = bytes::get<std::uint32_t>(data.data() + offset);
  offset += 4;
  if (version != kTensorVersion) throw IoError("unsupported tensor version " + std::to_string(version));
  const auto code = bytes::get<std::uint8_t>(data.data() + offset++);
  if (code > 2) throw IoError("unknown tensor dtype " + std::to_string(code));
  const auto rank = bytes::get<std::uint8_t>(data.data() + offset++);
  Tensor t;
  t.dtype = static_cast<DType>(code);
  need(8 * static_cast<std::size_t>(rank));
  std::uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const auto d = bytes::get<std::uint64_t>(data.data() + offset);
    offset += 8;
    if (d != 0 && count > (std::uint64_t{1} << 40) / d) throw IoError("tensor dims too large");
    count *= d;
    t.dims.push_back(d);
  }
  const std::size_t esize = dtype_size(t.dtype);
  need(static_cast<std::size_t>(count) * esize);
  t.values.resize(count);
  const char* p = data.data() + offset;
  for (std::uint64_t i = 0; i < count; ++i, p += esize) {
    switch (t.dtype) {
      case DType::kF32: t.values[i] = bytes::get<float>(p); break;
      case DType::kF64: t.values[i] = bytes::get<double>(p); break;
      case DType::kU8: t.values[i] = bytes::get<std::uint8_t>(p); break;
    }
  }
  offset += static_cast<std::size_t>(count) * esize;
  return t;
}

std::vector<Tensor> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  std::vector<Tensor> out;
  std::size_t offset = 0;
  try {
    do {
      out.push_back(decode_tensor(data, offset));
    } while (offset < data.size());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return out;
}

void write_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::string data;
  for (const Tensor& t : tensors) data += encode_tensor(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor to_tensor(const FeatureMap& map, DType dtype) {
  return Tensor(dtype,
                {static_cast<std::uint64_t>(map.height()), static_cast<std::uint64_t>(map.width()),
                 static_cast<std::uint64_t>(map.channels())},
                map.data());
}

FeatureMap to_feature_map(const Tensor& tensor) {
  if (tensor.dims.size() != 2 && tensor.dims.size() != 3) {
    throw IoError("feature map tensor must have rank 2 or 3");
  }
  const auto h = static_cast<int>(tensor.dims[0]);
  const auto w = static_cast<int>(tensor.dims[1]);
  const int c = tensor.dims.size() == 3 ? static_cast<int>(tensor.dims[2]) : 1;
  FeatureMap map(h, w, c);
  map.data() = tensor.values;
  return map;
}

}  // namespace dualuv
