#include "bncl/dataset.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bncl/rng.hpp"

namespace bncl {

void validate_dataset(const Dataset& ds) {
  require(!ds.samples.empty(), ErrorKind::invalid_argument,
          "dataset has no samples");
  require(ds.input_dim > 0, ErrorKind::invalid_argument,
          "dataset input_dim is zero");
  std::vector<char> seen(ds.class_count, 0);
  for (const Sample& s : ds.samples) {
    require(s.features.size() == ds.input_dim, ErrorKind::shape_mismatch,
            "sample feature length != input_dim");
    require(s.class_id < ds.class_count, ErrorKind::constraint,
            "class id " + std::to_string(s.class_id) + " out of range");
    seen[s.class_id] = 1;
  }
  for (std::size_t c = 0; c < ds.class_count; ++c)
    require(seen[c] != 0, ErrorKind::constraint,
            "class ids not dense: class " + std::to_string(c) + " missing");
}

namespace {

constexpr char kMagic[4] = {'B', 'N', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void read_exact(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  require(static_cast<std::size_t>(in.gcount()) == n, ErrorKind::truncated,
          "dataset file truncated");
}

Dataset load_binary(std::istream& in) {
  char magic[4];
  read_exact(in, magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorKind::bad_magic,
          "not a BNDS dataset");
  std::uint32_t version = 0;
  read_exact(in, &version, 4);
  require(version == kVersion, ErrorKind::bad_version,
          "unsupported BNDS version " + std::to_string(version));
  std::uint32_t count = 0, dim = 0;
  read_exact(in, &count, 4);
  read_exact(in, &dim, 4);
  Dataset ds;
  ds.input_dim = dim;
  ds.samples.resize(count);
  std::size_t max_class = 0;
  for (auto& s : ds.samples) {
    s.features.resize(dim);
    read_exact(in, s.features.data(), dim * sizeof(float));
    read_exact(in, &s.class_id, 2);
    read_exact(in, &s.instance_id, 2);
    max_class = std::max<std::size_t>(max_class, s.class_id);
  }
  ds.class_count = ds.samples.empty() ? 0 : max_class + 1;
  validate_dataset(ds);
  return ds;
}

Dataset load_text(std::istream& in) {
  Dataset ds;
  std::string line;
  std::size_t max_class = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream fields(line);
    std::string first;
    if (!(fields >> first) || first[0] == '#') continue;
    Sample s;
    long cls = -1, inst = -1;
    try {
      cls = std::stol(first);
    } catch (const std::exception&) {
      fail(ErrorKind::io, "line " + std::to_string(line_no) +
                              ": expected class id, got '" + first + "'");
    }
    require(static_cast<bool>(fields >> inst), ErrorKind::io,
            "line " + std::to_string(line_no) + ": missing instance id");
    require(cls >= 0 && cls <= 0xffff && inst >= 0 && inst <= 0xffff,
            ErrorKind::constraint,
            "line " + std::to_string(line_no) + ": ids out of u16 range");
    s.class_id = static_cast<std::uint16_t>(cls);
    s.instance_id = static_cast<std::uint16_t>(inst);
    double v = 0.0;
    while (fields >> v) s.features.push_back(static_cast<float>(v));
    if (!fields.eof())
      fail(ErrorKind::io,
           "line " + std::to_string(line_no) + ": malformed feature value");
    if (ds.samples.empty()) {
      ds.input_dim = s.features.size();
    } else {
      require(s.features.size() == ds.input_dim, ErrorKind::shape_mismatch,
              "line " + std::to_string(line_no) +
                  ": feature count differs from previous lines");
    }
    max_class = std::max<std::size_t>(max_class, s.class_id);
    ds.samples.push_back(std::move(s));
  }
  require(!ds.samples.empty(), ErrorKind::invalid_argument,
          "dataset file contains no samples");
  ds.class_count = max_class + 1;
  validate_dataset(ds);
  return ds;
}

bool looks_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  return in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0;
}

}  // namespace

Dataset load_dataset(const std::string& path, DatasetFormat format) {
  if (format == DatasetFormat::auto_detect)
    format = looks_binary(path) ? DatasetFormat::binary : DatasetFormat::text;
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open " + path);
  return format == DatasetFormat::binary ? load_binary(in) : load_text(in);
}

void save_dataset(const Dataset& ds, const std::string& path,
                  DatasetFormat format) {
  require(format != DatasetFormat::auto_detect, ErrorKind::invalid_argument,
          "save_dataset needs an explicit format");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::io, "cannot open " + path + " for writing");
  if (format == DatasetFormat::binary) {
    out.write(kMagic, 4);
    const std::uint32_t version = kVersion;
    const auto count = static_cast<std::uint32_t>(ds.samples.size());
    const auto dim = static_cast<std::uint32_t>(ds.input_dim);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    for (const Sample& s : ds.samples) {
      out.write(reinterpret_cast<const char*>(s.features.data()),
                static_cast<std::streamsize>(ds.input_dim * sizeof(float)));
      out.write(reinterpret_cast<const char*>(&s.class_id), 2);
      out.write(reinterpret_cast<const char*>(&s.instance_id), 2);
    }
  } else {
    out.precision(9);
    for (const Sample& s : ds.samples) {
      out << s.class_id << ' ' << s.instance_id;
      for (float f : s.features) out << ' ' << f;
      out << '\n';
    }
  }
  out.flush();
  require(out.good(), ErrorKind::io, "write failed for " + path);
}

Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  require(spec.classes > 0 && spec.instances_per_class > 0 &&
              spec.samples_per_instance > 0 && spec.dim > 0,
          ErrorKind::invalid_argument, "synthetic spec counts must be > 0");
  require(spec.classes <= 0xffff && spec.instances_per_class <= 0xffff,
          ErrorKind::invalid_argument, "synthetic ids exceed u16 range");
  Dataset ds;
  ds.class_count = spec.classes;
  ds.input_dim = spec.dim;
  Rng rng(derive_seed(seed, 0xD5D5));
  std::vector<double> center(spec.dim), offset(spec.dim);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (double& v : center) v = spec.class_separation * rng.normal();
    for (std::size_t i = 0; i < spec.instances_per_class; ++i) {
      for (double& v : offset) v = spec.instance_spread * rng.normal();
      for (std::size_t k = 0; k < spec.samples_per_instance; ++k) {
        Sample s;
        s.class_id = static_cast<std::uint16_t>(c);
        s.instance_id = static_cast<std::uint16_t>(i);
        s.features.resize(spec.dim);
        for (std::size_t d = 0; d < spec.dim; ++d)
          s.features[d] = static_cast<float>(center[d] + offset[d] +
                                             spec.noise * rng.normal());
        ds.samples.push_back(std::move(s));
      }
    }
  }
  return ds;
}

std::uint64_t dataset_fingerprint(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::uint64_t dims[2] = {ds.class_count, ds.input_dim};
  mix(dims, sizeof(dims));
  for (const Sample& s : ds.samples) {
    mix(&s.class_id, 2);
    mix(&s.instance_id, 2);
    mix(s.features.data(), s.features.size() * sizeof(float));
  }
  return h;
}

}  // namespace bncl
