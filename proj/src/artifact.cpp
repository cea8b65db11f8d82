#include "upa/artifact.hpp"

#include <cctype>
#include <cfenv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "json.hpp"
#include "upa/errors.hpp"

namespace upa::artifact {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.begin() + static_cast<long>(pos_), bytes_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) throw ArtifactError(std::string("truncated patch artifact while reading ") + what);
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArtifactError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ArtifactError("write failed for '" + path + "'");
}

}  // namespace

std::string make_metadata(const config::RunConfig& cfg) {
  const auto& w = cfg.attack.weights;
  nlohmann::json j;
  j["config_hash"] = config::config_hash(cfg);
  j["master_seed"] = cfg.attack.master_seed;
  j["anchor_image_gray"] = policy::kAnchorGray;
  j["probe_set"] = cfg.probe_set;
  j["loss_weights"] = {{"lambda_l1", w.lambda_l1},   {"lambda_con", w.lambda_con},
                       {"lambda_pad", w.lambda_pad}, {"lambda_psm", w.lambda_psm},
                       {"tau_con", w.tau_con},       {"tau_psm", w.tau_psm},
                       {"alpha", w.alpha},           {"beta", w.beta},
                       {"lambda_nonpatch", w.lambda_nonpatch}, {"margin", w.margin},
                       {"topk_fraction", w.topk_fraction},     {"attn_last_n", w.attn_last_n}};
  return j.dump();
}

std::vector<std::uint8_t> encode(const PatchArtifact& a) {
  const Tensor& t = a.patch.texels();
  std::vector<std::uint8_t> out{'U', 'P', 'A', 'F'};
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(a.patch.height()));
  put_u32(out, static_cast<std::uint32_t>(a.patch.width()));
  for (double v : t.data()) put_f32(out, static_cast<float>(v));
  put_u32(out, static_cast<std::uint32_t>(a.metadata.size()));
  out.insert(out.end(), a.metadata.begin(), a.metadata.end());
  return out;
}

PatchArtifact decode(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.text(4, "magic") != "UPAF") throw ArtifactError("not a patch artifact (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kFormatVersion)
    throw ArtifactError("unsupported patch artifact version " + std::to_string(version));
  const std::uint32_t h = r.u32("height"), w = r.u32("width");
  if (h == 0 || w == 0) throw ArtifactError("patch artifact has zero size");
  const std::uint64_t count = std::uint64_t{h} * w * 3;
  if (count * 4 > r.remaining()) throw ArtifactError("truncated patch artifact while reading texels");
  Tensor t({h, w, 3});
  for (std::uint64_t i = 0; i < count; ++i) {
    const float f = r.f32("texels");
    if (!(f >= 0.0f && f <= 1.0f)) throw ArtifactError("patch artifact texel " + std::to_string(i) + " outside [0, 1]");
    t[i] = f;
  }
  const std::uint32_t n = r.u32("metadata length");
  std::string meta = r.text(n, "metadata");
  if (r.remaining() != 0) throw ArtifactError("trailing bytes after patch artifact metadata");
  if (!nlohmann::json::accept(meta)) throw ArtifactError("patch artifact metadata is not valid JSON");
  return {render::PatchTexture(std::move(t)), std::move(meta)};
}

void save(const PatchArtifact& a, const std::string& path) { write_file(encode(a), path); }

PatchArtifact load(const std::string& path) { return decode(read_file(path)); }

std::vector<std::uint8_t> encode_ppm(const render::PatchTexture& patch, std::size_t scale) {
  if (scale < 1) throw std::invalid_argument("ppm scale must be >= 1");
  const std::size_t h = patch.height() * scale, w = patch.width() * scale;
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        out.push_back(static_cast<std::uint8_t>(std::nearbyint(patch.texels().at(y / scale, x / scale, c) * 255.0)));
  std::fesetround(saved);
  return out;
}

void write_ppm(const render::PatchTexture& patch, const std::string& path, std::size_t scale) {
  write_file(encode_ppm(patch, scale), path);
}

render::PatchTexture read_ppm(const std::string& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string s;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) s += static_cast<char>(bytes[pos++]);
    return s;
  };
  if (token() != "P6") throw ArtifactError("not a binary PPM: " + path);
  std::size_t w = 0, h = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
  } catch (const std::exception&) {
    throw ArtifactError("bad PPM dimensions: " + path);
  }
  if (token() != "255") throw ArtifactError("PPM maxval must be 255: " + path);
  ++pos;  // single whitespace byte before the raster
  if (bytes.size() - pos != w * h * 3) throw ArtifactError("PPM raster size mismatch: " + path);
  Tensor t({h, w, 3});
  for (std::size_t i = 0; i < w * h * 3; ++i) t[i] = bytes[pos + i] / 255.0;
  return render::PatchTexture(std::move(t));
}

}  // namespace upa::artifact
