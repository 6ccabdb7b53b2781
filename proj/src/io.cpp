#include "adrm/io.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include "adrm/error.hpp"

namespace adrm {

static_assert(std::endian::native == std::endian::little, "npy I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";

void write_npy_raw(const fs::path& path, const std::string& descr, const Shape& shape, const void* data,
                   std::size_t bytes) {
  std::string dims;
  for (std::size_t i = 0; i < shape.size(); ++i) dims += (i ? ", " : "") + std::to_string(shape[i]);
  if (shape.size() == 1) dims += ",";
  std::string header = "{'descr': '" + descr + "', 'fortran_order': False, 'shape': (" + dims + "), }";
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io_error, "cannot write " + path.string());
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 2);
  out << header;
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) fail(ErrorKind::io_error, "short write to " + path.string());
}

template <typename T>
void convert(const std::string& raw, std::vector<double>& out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v;
    std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
    out[i] = static_cast<double>(v);
  }
}

}  // namespace

void write_npy(const fs::path& path, const Tensor& array) {
  write_npy_raw(path, "<f8", array.shape(), array.data(), array.size() * sizeof(double));
}

void write_npy_labels(const fs::path& path, const std::vector<int>& labels) {
  std::vector<std::int64_t> wide(labels.begin(), labels.end());
  write_npy_raw(path, "<i8", {labels.size()}, wide.data(), wide.size() * sizeof(std::int64_t));
}

Tensor read_npy(const fs::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() < 10 || bytes.compare(0, 6, kMagic, 6) != 0)
    fail(ErrorKind::io_error, path.string() + " is not an .npy file");
  const int major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    offset = 10;
  } else {
    if (bytes.size() < 12) fail(ErrorKind::io_error, path.string() + ": truncated header");
    for (int i = 0; i < 4; ++i) header_len |= static_cast<std::size_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    offset = 12;
  }
  if (bytes.size() < offset + header_len) fail(ErrorKind::io_error, path.string() + ": truncated header");
  const std::string header = bytes.substr(offset, header_len);

  std::smatch m;
  if (!std::regex_search(header, m, std::regex(R"('descr'\s*:\s*'([^']+)')")))
    fail(ErrorKind::io_error, path.string() + ": missing dtype");
  const std::string descr = m[1];
  if (std::regex_search(header, std::regex(R"('fortran_order'\s*:\s*True)")))
    fail(ErrorKind::io_error, path.string() + ": Fortran-ordered arrays are not supported");
  if (!std::regex_search(header, m, std::regex(R"('shape'\s*:\s*\(([^)]*)\))")))
    fail(ErrorKind::io_error, path.string() + ": missing shape");
  Shape shape;
  std::stringstream dims(m[1].str());
  for (std::string tok; std::getline(dims, tok, ',');)
    if (tok.find_first_not_of(" ") != std::string::npos) shape.push_back(std::stoull(tok));

  Tensor out(shape);
  const std::string raw = bytes.substr(offset + header_len);
  auto need = [&](std::size_t width) {
    if (raw.size() < out.size() * width) fail(ErrorKind::io_error, path.string() + ": truncated data");
  };
  if (descr == "<f8") { need(8); convert<double>(raw, out.storage()); }
  else if (descr == "<f4") { need(4); convert<float>(raw, out.storage()); }
  else if (descr == "<i8") { need(8); convert<std::int64_t>(raw, out.storage()); }
  else if (descr == "<i4") { need(4); convert<std::int32_t>(raw, out.storage()); }
  else if (descr == "|u1") { need(1); convert<std::uint8_t>(raw, out.storage()); }
  else fail(ErrorKind::io_error, path.string() + ": unsupported dtype " + descr);
  return out;
}

std::vector<int> read_npy_labels(const fs::path& path) {
  const Tensor t = read_npy(path);
  if (t.rank() != 1) fail(ErrorKind::io_error, path.string() + ": labels must be one-dimensional");
  std::vector<int> out;
  out.reserve(t.size());
  for (double v : t.values()) out.push_back(static_cast<int>(v));
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    fail(ErrorKind::io_error, "sha256 failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 15]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::artifact_not_found, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_atomic(const fs::path& path, std::string_view text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io_error, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(ErrorKind::io_error, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace adrm
