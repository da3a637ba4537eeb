#include "slmicl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <openssl/evp.h>

namespace slmicl {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

const char* const kCodebookName = "codebook.centroids";

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_tensor(std::string& out, const std::string& name, const std::vector<std::size_t>& shape,
                const float* data, std::size_t n) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  out.append(reinterpret_cast<const char*>(data), n * sizeof(float));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}

  bool done() const { return pos_ == buf_.size(); }

  void read(void* dst, std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) {
      fail(ErrorCode::truncated_file, std::string("truncated file: unexpected end while reading ") + what);
    }
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    read(&v, 4, what);
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    std::string s(n, '\0');
    read(s.data(), n, what);
    return s;
  }

 private:
  std::string buf_;
  std::size_t pos_ = 0;
};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) fail(ErrorCode::io, "sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out += digits[md[i] >> 4];
      out += digits[md[i] & 15];
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

Codebook round_codebook(const Codebook& cb) {
  Codebook out = cb;
  for (auto& v : out.centroids) v = static_cast<double>(static_cast<float>(v));
  return out;
}

void save_checkpoint(const ModelParams<float>& model, const Codebook* codebook,
                     const PromptBank<float>* prompts, const std::string& path) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  const std::string cfg = nlohmann::json(model.config).dump();
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  for (const auto& t : model.params) put_tensor(out, t.name, t.shape, t.data.data(), t.numel());
  if (codebook) {
    std::vector<float> c(codebook->centroids.begin(), codebook->centroids.end());
    put_tensor(out, kCodebookName,
               {static_cast<std::size_t>(codebook->k), static_cast<std::size_t>(codebook->d_feat)}, c.data(),
               c.size());
  }
  if (prompts) {
    for (const auto& t : prompts->params) put_tensor(out, t.name, t.shape, t.data.data(), t.numel());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::io, "cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorCode::io, "write to '" + path + "' failed");
}

CheckpointBundle load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot open checkpoint '" + path + "'");
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));

  char magic[8];
  r.read(magic, 8, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) fail(ErrorCode::bad_magic, "bad magic in '" + path + "'");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    fail(ErrorCode::version_mismatch, "checkpoint version " + std::to_string(version) + " not supported (expected " +
                                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto cfg_len = r.u32("config length");
  const std::string cfg_text = r.str(cfg_len, "config");
  LmConfig cfg;
  try {
    nlohmann::json::parse(cfg_text).get_to(cfg);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("malformed checkpoint config: ") + e.what());
  }
  cfg.validate();

  CheckpointBundle b{make_model_layout<float>(cfg), std::nullopt, std::nullopt};
  ParamSet<float> prompt_tensors;
  std::size_t model_seen = 0;
  while (!r.done()) {
    const std::string name = r.str(r.u32("tensor name length"), "tensor name");
    const auto rank = r.u32("tensor rank");
    std::vector<std::size_t> shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32("tensor dims"));
    const std::size_t n = shape_numel(shape);
    std::vector<float> data(n);
    r.read(data.data(), n * sizeof(float), "tensor data");

    if (name == kCodebookName) {
      if (shape.size() != 2) fail(ErrorCode::io, "codebook tensor must have rank 2");
      Codebook cb;
      cb.k = static_cast<int>(shape[0]);
      cb.d_feat = static_cast<int>(shape[1]);
      cb.centroids.assign(data.begin(), data.end());
      b.codebook = std::move(cb);
    } else if (name.rfind("prompt.", 0) == 0 || name == "embed.sep") {
      prompt_tensors[prompt_tensors.add(name, shape)].data = std::move(data);
    } else {
      if (!b.model.params.contains(name)) fail(ErrorCode::io, "unexpected tensor '" + name + "' in checkpoint");
      auto& t = b.model.params.at(name);
      if (t.shape != shape) fail(ErrorCode::io, "shape mismatch for tensor '" + name + "'");
      t.data = std::move(data);
      ++model_seen;
    }
  }
  if (model_seen != b.model.params.size()) fail(ErrorCode::truncated_file, "truncated file: missing model tensors");
  if (prompt_tensors.size() > 0) {
    PromptBank<float> p;
    p.params = std::move(prompt_tensors);
    p.sep_token = cfg.vocab_size - 2;
    try {
      p.bind(cfg.n_layers);
    } catch (const Error&) {
      fail(ErrorCode::truncated_file, "truncated file: incomplete prompt tensors");
    }
    b.prompts = std::move(p);
  }
  return b;
}

std::string backbone_hash(const ModelParams<float>& model) {
  Sha256 h;
  for (const auto& t : model.params) {
    h.update(t.name.data(), t.name.size());
    for (auto d : t.shape) {
      const auto v = static_cast<std::uint64_t>(d);
      h.update(&v, sizeof v);
    }
    h.update(t.data.data(), t.numel() * sizeof(float));
  }
  return h.hex();
}

std::string file_sha256(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::io, "cannot open '" + path + "'");
  Sha256 h;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(f.gcount()));
  }
  return h.hex();
}

}  // namespace slmicl
