#include "cmirror/io.hpp"

#include "cmirror/config.hpp"
#include "cmirror/errors.hpp"

#include <bit>
#include <cctype>
#include <iterator>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cmirror {

namespace fs = std::filesystem;

namespace {

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

bool host_little_endian() { return std::endian::native == std::endian::little; }

std::string read_token(std::istream& in) {
  std::string tok;
  char ch = 0;
  while (in.get(ch) && std::isspace(static_cast<unsigned char>(ch))) {
  }
  if (!in) return tok;
  tok.push_back(ch);
  while (in.get(ch) && !std::isspace(static_cast<unsigned char>(ch))) tok.push_back(ch);
  return tok;  // the single whitespace after the token has been consumed
}

void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_f32(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  const char b[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                     static_cast<char>((bits >> 16) & 0xff), static_cast<char>(bits >> 24)};
  out.write(b, 4);
}

class ByteReader {
public:
  ByteReader(std::vector<unsigned char> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  double f32() {
    need(4);
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes_[pos_]) |
                               (static_cast<std::uint32_t>(bytes_[pos_ + 1]) << 8) |
                               (static_cast<std::uint32_t>(bytes_[pos_ + 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24);
    pos_ += 4;
    return static_cast<double>(std::bit_cast<float>(bits));
  }

  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw InputError(source_ + ": model file truncated");
  }

  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
  std::string source_;
};

} // namespace

// ---------------------------------------------------------------------------
// PFM

Image read_pfm(std::istream& in, const std::string& source) {
  const std::string magic = read_token(in);
  if (magic == "PF") throw InputError(source + ": color PFM ('PF') is not supported, expected grayscale 'Pf'");
  if (magic != "Pf") throw InputError(source + ": malformed PFM header (bad magic)");
  const std::string ws = read_token(in);
  const std::string hs = read_token(in);
  const std::string ss = read_token(in);
  long width = 0, height = 0;
  double scale = 0.0;
  try {
    std::size_t a = 0, b = 0, c = 0;
    width = std::stol(ws, &a);
    height = std::stol(hs, &b);
    scale = std::stod(ss, &c);
    if (a != ws.size() || b != hs.size() || c != ss.size()) throw std::invalid_argument("pfm");
  } catch (const std::exception&) {
    throw InputError(source + ": malformed PFM header");
  }
  if (width <= 0 || height <= 0 || scale == 0.0 || !std::isfinite(scale))
    throw InputError(source + ": malformed PFM header");
  const bool little = scale < 0.0;

  const std::size_t expected = static_cast<std::size_t>(width) * height * 4;
  std::vector<char> payload(expected);
  in.read(payload.data(), static_cast<std::streamsize>(expected));
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got < expected)
    throw InputError(source + ": payload short by " + std::to_string(expected - got) + " bytes");

  Image img(height, width);
  const bool swap = little != host_little_endian();
  for (long row = 0; row < height; ++row) {
    const long y = height - 1 - row;  // stored bottom-up
    for (long x = 0; x < width; ++x) {
      std::uint32_t bits;
      std::memcpy(&bits, payload.data() + (static_cast<std::size_t>(row) * width + x) * 4, 4);
      if (swap) bits = byteswap32(bits);
      img(y, x) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return img;
}

Image read_pfm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_pfm(in, path.string());
}

void write_pfm(const Image& img, std::ostream& out) {
  if (!all_finite(img)) throw InputError("refusing to write PFM with non-finite pixels");
  out << "Pf\n" << img.cols() << " " << img.rows() << "\n-1.0\n";
  const auto h = img.rows();
  const auto w = img.cols();
  std::vector<char> payload(static_cast<std::size_t>(h * w) * 4);
  for (Eigen::Index row = 0; row < h; ++row) {
    const Eigen::Index y = h - 1 - row;
    for (Eigen::Index x = 0; x < w; ++x) {
      auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(img(y, x)));
      if (!host_little_endian()) bits = byteswap32(bits);
      std::memcpy(payload.data() + (static_cast<std::size_t>(row * w + x)) * 4, &bits, 4);
    }
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

void write_pfm(const Image& img, const fs::path& path) {
  if (!all_finite(img)) throw InputError("refusing to write PFM with non-finite pixels: " + path.string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  write_pfm(img, out);
  if (!out) throw InputError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Model file

void save_model(const SeidelConvModel& model, const fs::path& path) {
  model.validate();
  const auto fits16 = [](int v) { return v >= 0 && v <= 0xffff; };
  if (!fits16(model.height()) || !fits16(model.width()) || !fits16(model.components()) ||
      !fits16(model.slices()) || !fits16(model.kernel_size()))
    throw InputError("model dimensions exceed the 16-bit file header");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  const bool grid = model.weight_downsample() != 1;
  out.write("SCNV", 4);
  put_u16(out, grid ? kModelVersionGrid : kModelVersionFull);
  put_u16(out, static_cast<std::uint16_t>(model.components()));
  put_u16(out, static_cast<std::uint16_t>(model.slices()));
  put_u16(out, static_cast<std::uint16_t>(model.kernel_size()));
  put_u16(out, static_cast<std::uint16_t>(model.height()));
  put_u16(out, static_cast<std::uint16_t>(model.width()));
  if (grid) {
    put_u16(out, static_cast<std::uint16_t>(model.weight_downsample()));
    put_u16(out, 0);
  }
  for (int k = 0; k < model.slices(); ++k) {
    for (int q = 0; q < model.components(); ++q) {
      const auto& c = model.component(k, q);
      put_f32(out, c.warp.R(0, 0));
      put_f32(out, c.warp.R(0, 1));
      put_f32(out, c.warp.t(0));
      put_f32(out, c.warp.R(1, 0));
      put_f32(out, c.warp.R(1, 1));
      put_f32(out, c.warp.t(1));
      for (Eigen::Index i = 0; i < c.kernel.size(); ++i) put_f32(out, c.kernel.data()[i]);
      for (Eigen::Index i = 0; i < c.weight.size(); ++i) put_f32(out, c.weight.data()[i]);
    }
  }
  if (!out) throw InputError("failed writing " + path.string());
}

SeidelConvModel load_model(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open model file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader rd(std::move(bytes), path.string());
  if (rd.remaining() < 4 || rd.raw(4) != "SCNV")
    throw InputError(path.string() + ": not a SeidelConv model file (bad magic)");
  const auto version = rd.u16();
  if (version != kModelVersionFull && version != kModelVersionGrid)
    throw InputError(path.string() + ": unsupported model file version " + std::to_string(version));
  const int Q = rd.u16();
  const int N = rd.u16();
  const int K = rd.u16();
  const int H = rd.u16();
  const int W = rd.u16();
  int ds = 1;
  if (version == kModelVersionGrid) {
    ds = rd.u16();
    rd.u16();
    if (ds < 2) throw InputError(path.string() + ": invalid weight_downsample in header");
  }
  if (Q < 1 || N < 1 || K < 1 || K % 2 == 0 || H < 1 || W < 1)
    throw InputError(path.string() + ": invalid model header");
  SeidelConvModel model(H, W, K, Q, N, ds);
  const std::size_t per_record = 6 + static_cast<std::size_t>(K) * K +
                                 static_cast<std::size_t>(model.weight_grid_height()) * model.weight_grid_width();
  const std::size_t expected = per_record * 4 * static_cast<std::size_t>(Q) * N;
  if (rd.remaining() != expected)
    throw InputError(path.string() + ": payload size " + std::to_string(rd.remaining()) +
                     " does not match header (expected " + std::to_string(expected) + ")");
  for (int k = 0; k < N; ++k) {
    for (int q = 0; q < Q; ++q) {
      auto& c = model.component(k, q);
      c.warp.R(0, 0) = rd.f32();
      c.warp.R(0, 1) = rd.f32();
      c.warp.t(0) = rd.f32();
      c.warp.R(1, 0) = rd.f32();
      c.warp.R(1, 1) = rd.f32();
      c.warp.t(1) = rd.f32();
      for (Eigen::Index i = 0; i < c.kernel.size(); ++i) c.kernel.data()[i] = rd.f32();
      for (Eigen::Index i = 0; i < c.weight.size(); ++i) c.weight.data()[i] = rd.f32();
    }
  }
  model.validate();
  return model;
}

// ---------------------------------------------------------------------------
// Stack directories

void write_stack(const FocalStack& stack, const fs::path& dir) {
  stack.validate();
  fs::create_directories(dir);
  for (int k = 0; k < stack.size(); ++k) write_pfm(stack.slices[k], dir / (std::to_string(k) + ".pfm"));
  write_key_values({{"z0", format_double(stack.z0)},
                    {"dz", format_double(stack.dz)},
                    {"n", std::to_string(stack.size())},
                    {"corrected", stack.corrected ? "true" : "false"}},
                   dir / "stack.txt");
}

FocalStack read_stack(const fs::path& dir) {
  const fs::path meta = dir / "stack.txt";
  if (!fs::exists(meta)) throw InputError("missing stack metadata " + meta.string());
  const auto cfg = KeyValueConfig::parse_file(meta);
  cfg.require_known({"z0", "dz", "n", "corrected"});
  FocalStack s;
  s.z0 = cfg.get_double("z0");
  s.dz = cfg.get_double("dz");
  s.corrected = cfg.get_bool("corrected", false);
  const long n = cfg.get_int("n");
  if (n < 1) throw InputError(meta.string() + ": n must be >= 1");
  for (long k = 0; k < n; ++k) s.slices.push_back(read_pfm(dir / (std::to_string(k) + ".pfm")));
  s.validate();
  return s;
}

} // namespace cmirror
