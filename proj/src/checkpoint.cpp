#include "bncl/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace bncl {

namespace {

constexpr char kSectionTag[4] = {'C', 'W', 'R', 'S'};

void write_raw(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_exact(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  require(static_cast<std::size_t>(in.gcount()) == n, ErrorKind::truncated,
          "checkpoint truncated");
}

template <class T>
void write_pod(std::ostream& out, T v) {
  write_raw(out, &v, sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
  T v;
  read_exact(in, &v, sizeof(T));
  return v;
}

}  // namespace

void save_run_checkpoint(const RunCheckpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot open " + path + " for writing");
  write_container_header(out);
  write_backbone_payload(out, ckpt.backbone);

  write_raw(out, kSectionTag, 4);
  const auto classes = static_cast<std::uint32_t>(ckpt.class_ids.size());
  const auto feat = static_cast<std::uint32_t>(ckpt.cw.cols);
  write_pod(out, classes);
  write_pod(out, feat);
  for (int id : ckpt.class_ids) write_pod<std::int32_t>(out, id);
  write_raw(out, ckpt.cw.v.data(), ckpt.cw.v.size() * sizeof(double));
  write_raw(out, ckpt.cw_bias.data(), ckpt.cw_bias.size() * sizeof(double));
  write_raw(out, ckpt.past.data(), ckpt.past.size() * sizeof(std::uint64_t));
  write_pod<std::uint8_t>(out, ckpt.scenario == Scenario::ni ? 1 : 0);
  write_pod<std::uint64_t>(out, ckpt.seed);
  write_pod<std::uint64_t>(out, ckpt.dataset_fingerprint);
  write_pod<std::uint32_t>(out, ckpt.experiences_done);
  out.flush();
  require(out.good(), ErrorKind::io, "write failed for " + path);
}

RunCheckpoint load_run_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path);
  read_container_header(in);
  RunCheckpoint ckpt;
  ckpt.backbone = read_backbone_payload(in);

  char tag[4];
  read_exact(in, tag, 4);
  require(std::memcmp(tag, kSectionTag, 4) == 0, ErrorKind::bad_magic,
          "missing CWRS section in run checkpoint");
  const auto classes = read_pod<std::uint32_t>(in);
  const auto feat = read_pod<std::uint32_t>(in);
  ckpt.class_ids.resize(classes);
  for (auto& id : ckpt.class_ids) id = read_pod<std::int32_t>(in);
  ckpt.cw = MatD(classes, feat);
  read_exact(in, ckpt.cw.v.data(), ckpt.cw.v.size() * sizeof(double));
  ckpt.cw_bias.resize(classes);
  read_exact(in, ckpt.cw_bias.data(), classes * sizeof(double));
  ckpt.past.resize(classes);
  read_exact(in, ckpt.past.data(), classes * sizeof(std::uint64_t));
  ckpt.scenario = read_pod<std::uint8_t>(in) ? Scenario::ni : Scenario::nc;
  ckpt.seed = read_pod<std::uint64_t>(in);
  ckpt.dataset_fingerprint = read_pod<std::uint64_t>(in);
  ckpt.experiences_done = read_pod<std::uint32_t>(in);
  return ckpt;
}

}  // namespace bncl
