#include "hsnerf/checkpoint.hpp"

#include <fstream>

#include "hsnerf/binary_io.hpp"
#include "hsnerf/error.hpp"

namespace hsnerf {

namespace {

constexpr std::string_view kMagic = "HFCK";

void write_values(std::ostream& os, const Tensor& t) {
  binio::write_f64_array(os, t.data());
}

Tensor read_values(std::istream& is, Shape shape, std::string_view what) {
  Tensor t(std::move(shape));
  binio::read_f64_array(is, t.data(), what);
  return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                     const ParameterStore& params, const AdamState& adam) {
  if (adam.first_moment.size() != params.size() || adam.second_moment.size() != params.size())
    throw ShapeError("save_checkpoint: optimizer state does not match parameters");
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open checkpoint for writing: " + tmp.string());
    binio::write_bytes(os, kMagic);
    binio::write_u32(os, kCheckpointVersion);
    const std::string hdr = header.dump();
    binio::write_u32(os, static_cast<std::uint32_t>(hdr.size()));
    binio::write_bytes(os, hdr);
    binio::write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
      binio::write_u32(os, static_cast<std::uint32_t>(p->name.size()));
      binio::write_bytes(os, p->name);
      binio::write_u32(os, static_cast<std::uint32_t>(p->value.ndim()));
      for (auto d : p->value.shape()) binio::write_u64(os, d);
      write_values(os, p->value);
    }
    binio::write_u64(os, static_cast<std::uint64_t>(adam.step_count));
    binio::write_f64(os, adam.learning_rate);
    binio::write_f64(os, adam.beta1);
    binio::write_f64(os, adam.beta2);
    binio::write_f64(os, adam.epsilon);
    binio::write_u32(os, static_cast<std::uint32_t>(adam.first_moment.size()));
    for (std::size_t k = 0; k < adam.first_moment.size(); ++k) {
      write_values(os, adam.first_moment[k]);
      write_values(os, adam.second_moment[k]);
    }
    if (!os) throw DataError("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  const std::string what = "checkpoint " + path.string();
  if (binio::read_bytes(is, 4, what) != kMagic) throw DataError(what + ": bad magic (expected HFCK)");
  const auto version = binio::read_u32(is, what);
  if (version != kCheckpointVersion)
    throw DataError(what + ": unsupported version " + std::to_string(version));

  CheckpointData out;
  const auto hdr_len = binio::read_u32(is, what);
  try {
    out.header = nlohmann::json::parse(binio::read_bytes(is, hdr_len, what));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(what + ": malformed header: " + e.what());
  }
  const auto n_params = binio::read_u32(is, what);
  std::vector<Shape> shapes;
  for (std::uint32_t k = 0; k < n_params; ++k) {
    NamedTensor nt;
    nt.name = binio::read_bytes(is, binio::read_u32(is, what), what);
    const auto ndim = binio::read_u32(is, what);
    Shape shape(ndim);
    for (auto& d : shape) d = binio::read_u64(is, what);
    nt.value = read_values(is, shape, what);
    shapes.push_back(shape);
    out.params.push_back(std::move(nt));
  }
  out.adam.step_count = static_cast<std::int64_t>(binio::read_u64(is, what));
  out.adam.learning_rate = binio::read_f64(is, what);
  out.adam.beta1 = binio::read_f64(is, what);
  out.adam.beta2 = binio::read_f64(is, what);
  out.adam.epsilon = binio::read_f64(is, what);
  const auto n_moments = binio::read_u32(is, what);
  if (n_moments != n_params) throw DataError(what + ": optimizer moment count does not match parameters");
  for (std::uint32_t k = 0; k < n_moments; ++k) {
    out.adam.first_moment.push_back(read_values(is, shapes[k], what));
    out.adam.second_moment.push_back(read_values(is, shapes[k], what));
  }
  return out;
}

void restore_parameters(const CheckpointData& ckpt, ParameterStore& params) {
  if (ckpt.params.size() != params.size())
    throw DataError("checkpoint has " + std::to_string(ckpt.params.size()) + " parameter blocks, model has " +
                    std::to_string(params.size()));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    const NamedTensor& src = ckpt.params[k];
    if (src.name != p.name) throw DataError("checkpoint block '" + src.name + "' where '" + p.name + "' expected");
    if (src.value.shape() != p.value.shape())
      throw DataError("checkpoint block '" + p.name + "' has shape " + shape_str(src.value.shape()) +
                      ", model expects " + shape_str(p.value.shape()));
    std::copy(src.value.data().begin(), src.value.data().end(), p.value.data().begin());
  }
}

}  // namespace hsnerf
