#include "mtp/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mtp {

namespace {

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_i64(std::ostream& os, int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint64_t read_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
int64_t read_i64(std::istream& is) {
  int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
std::string read_str(std::istream& is) {
  const uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for write: " + path);
  os.write(kCheckpointMagic, 5);
  const auto& c = model.config();
  write_i64(os, c.n_layers);
  write_i64(os, c.d_model);
  write_i64(os, c.n_heads);
  write_i64(os, c.mlp_factor);
  write_i64(os, c.vocab_size);
  write_i64(os, c.max_seq_len);
  write_i64(os, c.tie_embeddings ? 1 : 0);
  const auto& s = model.strategy();
  write_str(os, to_string(s.kind));
  write_i64(os, s.depth);
  write_f64(os, s.lambda);
  write_f64(os, s.gamma);
  write_i64(os, s.gamma_learnable ? 1 : 0);
  write_i64(os, s.row0_skip ? 1 : 0);
  write_i64(os, s.adjusted_ntp ? 1 : 0);
  const auto& params = model.params().all();
  write_u64(os, params.size());
  for (const auto& p : params) {
    write_str(os, p.name);
    write_u64(os, static_cast<uint64_t>(p.tensor.rows()));
    write_u64(os, static_cast<uint64_t>(p.tensor.cols()));
    const Mat& m = p.tensor.value();  // row-major storage
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  // learnable-scalar gamma travels with the registry; a fixed gamma is in
  // the header already
  if (!os) throw std::runtime_error("short write to checkpoint: " + path);
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[5] = {};
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kCheckpointMagic, 5) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path +
                             ": expected \"MTPB1\"");
  }
  BackboneConfig c;
  c.n_layers = static_cast<int>(read_i64(is));
  c.d_model = static_cast<int>(read_i64(is));
  c.n_heads = static_cast<int>(read_i64(is));
  c.mlp_factor = static_cast<int>(read_i64(is));
  c.vocab_size = static_cast<int>(read_i64(is));
  c.max_seq_len = static_cast<int>(read_i64(is));
  c.tie_embeddings = read_i64(is) != 0;
  HeadStrategy s;
  s.kind = strategy_from_string(read_str(is));
  s.depth = static_cast<int>(read_i64(is));
  s.lambda = read_f64(is);
  s.gamma = read_f64(is);
  s.gamma_learnable = read_i64(is) != 0;
  s.row0_skip = read_i64(is) != 0;
  s.adjusted_ntp = read_i64(is) != 0;
  auto model = std::make_unique<Model>(c, s, /*init_seed=*/0);
  const uint64_t n = read_u64(is);
  if (n != model->params().all().size()) {
    throw std::runtime_error("checkpoint parameter count mismatch in " + path);
  }
  for (uint64_t i = 0; i < n; ++i) {
    const std::string name = read_str(is);
    const auto rows = static_cast<Index>(read_u64(is));
    const auto cols = static_cast<Index>(read_u64(is));
    Parameter* p = model->params().find(name);
    if (!p) throw std::runtime_error("checkpoint has unknown parameter " + name);
    if (p->tensor.rows() != rows || p->tensor.cols() != cols) {
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    }
    is.read(reinterpret_cast<char*>(p->tensor.value().data()),
            static_cast<std::streamsize>(rows * cols * sizeof(double)));
  }
  if (!is) throw std::runtime_error("truncated checkpoint: " + path);
  return model;
}

}  // namespace mtp
