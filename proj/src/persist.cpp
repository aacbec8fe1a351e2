#include "prismwf/persist.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include "json.hpp"

#include "prismwf/rng.hpp"

namespace prismwf {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

constexpr std::string_view kTraceHeader = "# prismwf-trace v";
constexpr std::string_view kMatrixMagic = "PRISMWF-MATRIX";
constexpr std::string_view kCheckpointMagic = "PRISMWFC";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error("parse_error", what + ": not a number: '" + std::string(s) + "'");
  }
  return v;
}

long long parse_int(std::string_view s, const std::string& what) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error("parse_error", what + ": not an integer: '" + std::string(s) + "'");
  }
  return v;
}

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
void put(std::string& out, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  out.append(raw, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error("corrupt_file", origin_ + ": truncated");
  }
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing_file", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io_error", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io_error", "short write to " + path.string());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ------------------------------------------------------------------ traces

std::string format_timestamp(double t) {
  char buf[400];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, t, std::chars_format::fixed);
  std::string s(buf, ptr);
  auto dot = s.find('.');
  if (dot == std::string::npos) {
    s += '.';
    dot = s.size() - 1;
  }
  const std::size_t frac = s.size() - dot - 1;
  if (frac < 6) s.append(6 - frac, '0');
  return s;
}

std::string trace_to_text(const Trace& trace) {
  std::string out(kTraceHeader);
  out += std::to_string(kTraceFormatVersion) + "\n";
  if (trace.origin_class()) out += "# origin=" + std::to_string(*trace.origin_class()) + "\n";
  for (const auto& e : trace.events()) {
    out += format_timestamp(e.timestamp());
    out += e.direction() > 0 ? "\t1\n" : "\t-1\n";
  }
  return out;
}

Trace trace_from_text(const std::string& text, const std::string& origin) {
  std::vector<PacketEvent> events;
  std::optional<int> origin_class;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (t[0] == '#') {
      if (t.starts_with(kTraceHeader)) {
        const auto v = parse_int(std::string_view(t).substr(kTraceHeader.size()), where);
        if (v != kTraceFormatVersion) {
          throw Error("unsupported_version", where + ": trace format v" + std::to_string(v));
        }
      } else if (t.starts_with("# origin=")) {
        origin_class = static_cast<int>(parse_int(std::string_view(t).substr(9), where));
      }
      continue;
    }
    const auto tab = t.find('\t');
    if (tab == std::string::npos) throw Error("parse_error", where + ": expected timestamp<TAB>direction");
    const double ts = parse_double(trim(t.substr(0, tab)), where);
    const auto dir = parse_int(trim(t.substr(tab + 1)), where);
    try {
      events.emplace_back(ts, static_cast<int>(dir));
    } catch (const Error& e) {
      throw Error("parse_error", where + ": " + e.what());
    }
  }
  return Trace(std::move(events), origin_class);
}

void write_trace(const fs::path& path, const Trace& trace) { write_file(path, trace_to_text(trace)); }

Trace read_trace(const fs::path& path) { return trace_from_text(read_file(path), path.string()); }

// ---------------------------------------------------------------- matrices

std::string matrix_to_bytes(const FeatureMatrix& m) {
  const auto& v = m.values();
  std::string out = std::string(kMatrixMagic) + " " + std::to_string(kMatrixFormatVersion) +
                    " rows=" + std::to_string(v.rows()) + " cols=" + std::to_string(v.cols()) +
                    " dt=" + shortest(m.slot_seconds()) + " T=" + shortest(m.max_seconds()) + "\n";
  out.reserve(out.size() + static_cast<std::size_t>(v.size()) * 8);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) put(out, v(r, c));
  }
  return out;
}

FeatureMatrix matrix_from_bytes(const std::string& bytes, const std::string& origin) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw Error("corrupt_file", origin + ": missing matrix header");
  std::istringstream header(bytes.substr(0, nl));
  std::string magic, version;
  header >> magic >> version;
  if (magic != kMatrixMagic) throw Error("corrupt_file", origin + ": not a feature matrix");
  if (version != std::to_string(kMatrixFormatVersion)) {
    throw Error("unsupported_version", origin + ": matrix format v" + version);
  }
  std::map<std::string, std::string> fields;
  std::string kv;
  while (header >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("corrupt_file", origin + ": bad header field " + kv);
    fields[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  for (const char* key : {"rows", "cols", "dt", "T"}) {
    if (!fields.count(key)) throw Error("corrupt_file", origin + ": header lacks " + key);
  }
  const auto rows = parse_int(fields["rows"], origin);
  const auto cols = parse_int(fields["cols"], origin);
  const double dt = parse_double(fields["dt"], origin);
  const double T = parse_double(fields["T"], origin);
  if (rows != kFeatureRows || cols < 1) throw Error("shape_mismatch", origin + ": bad matrix shape");
  if (cols != slot_count(T, dt)) {
    throw Error("shape_mismatch", origin + ": cols disagrees with dt and T");
  }
  const std::size_t payload = bytes.size() - nl - 1;
  if (payload != static_cast<std::size_t>(rows * cols) * 8) {
    throw Error("shape_mismatch", origin + ": payload size disagrees with header");
  }
  Eigen::MatrixXd v(rows, cols);
  const char* p = bytes.data() + nl + 1;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c, p += 8) std::memcpy(&v(r, c), p, 8);
  }
  return FeatureMatrix(std::move(v), dt, T);
}

void write_matrix(const fs::path& path, const FeatureMatrix& m) { write_file(path, matrix_to_bytes(m)); }

FeatureMatrix read_matrix(const fs::path& path) { return matrix_from_bytes(read_file(path), path.string()); }

fs::path matrix_path_for(const fs::path& trace_path) {
  fs::path p = trace_path;
  p.replace_extension(".matrix");
  return p;
}

// ---------------------------------------------------------------- manifest

namespace {

json generator_json(const GeneratorParams& g) {
  return {{"min_bursts", g.min_bursts},         {"max_bursts", g.max_bursts},
          {"min_runs", g.min_runs},             {"max_runs", g.max_runs},
          {"max_out_run", g.max_out_run},       {"max_in_run", g.max_in_run},
          {"min_packet_gap", g.min_packet_gap}, {"max_packet_gap", g.max_packet_gap},
          {"min_burst_gap", g.min_burst_gap},   {"max_burst_gap", g.max_burst_gap},
          {"jitter", g.jitter},                 {"burst_drift", g.burst_drift}};
}

GeneratorParams generator_from(const json& j) {
  GeneratorParams g;
  j.at("min_bursts").get_to(g.min_bursts);
  j.at("max_bursts").get_to(g.max_bursts);
  j.at("min_runs").get_to(g.min_runs);
  j.at("max_runs").get_to(g.max_runs);
  j.at("max_out_run").get_to(g.max_out_run);
  j.at("max_in_run").get_to(g.max_in_run);
  j.at("min_packet_gap").get_to(g.min_packet_gap);
  j.at("max_packet_gap").get_to(g.max_packet_gap);
  j.at("min_burst_gap").get_to(g.min_burst_gap);
  j.at("max_burst_gap").get_to(g.max_burst_gap);
  j.at("jitter").get_to(g.jitter);
  j.at("burst_drift").get_to(g.burst_drift);
  return g;
}

json front_json(const FrontParams& f) {
  return {{"max_client_dummies", f.max_client_dummies},
          {"max_server_dummies", f.max_server_dummies},
          {"window_min", f.window_min},
          {"window_max", f.window_max}};
}

FrontParams front_from(const json& j) {
  FrontParams f;
  j.at("max_client_dummies").get_to(f.max_client_dummies);
  j.at("max_server_dummies").get_to(f.max_server_dummies);
  j.at("window_min").get_to(f.window_min);
  j.at("window_max").get_to(f.window_max);
  return f;
}

template <typename F>
auto json_guard(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error("parse_error", what + ": " + e.what());
  }
}

}  // namespace

Split parse_split(const std::string& text) {
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kVal;
  if (text == "test") return Split::kTest;
  throw Error("invalid_argument", "split must be train, val or test, got " + text);
}

std::string manifest_to_json(const DatasetManifest& m) {
  const auto& s = m.spec;
  json j;
  j["format_version"] = m.format_version;
  j["num_classes"] = s.num_classes;
  j["tabs"] = s.tabs;
  j["seed"] = m.seed;
  j["instances_per_combination"] = s.instances_per_combination;
  j["offset_max"] = s.offset_max;
  j["train_fraction"] = s.train_fraction;
  j["val_fraction"] = s.val_fraction;
  j["max_combinations"] = s.max_combinations;
  j["generator"] = generator_json(s.generator);
  j["defense"] = s.defense ? front_json(*s.defense) : json(nullptr);
  json splits = json::object();
  for (const auto& [split, entries] : m.splits) {
    json arr = json::array();
    for (const auto& e : entries) arr.push_back({{"trace", e.trace}, {"labels", e.labels}});
    splits[split_name(split)] = std::move(arr);
  }
  j["splits"] = std::move(splits);
  return j.dump(1) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  return json_guard("manifest", [&] {
    const json j = json::parse(text);
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kManifestFormatVersion) {
      throw Error("unsupported_version", "manifest format v" + std::to_string(m.format_version));
    }
    auto& s = m.spec;
    j.at("num_classes").get_to(s.num_classes);
    j.at("tabs").get_to(s.tabs);
    j.at("seed").get_to(m.seed);
    j.at("instances_per_combination").get_to(s.instances_per_combination);
    j.at("offset_max").get_to(s.offset_max);
    j.at("train_fraction").get_to(s.train_fraction);
    j.at("val_fraction").get_to(s.val_fraction);
    j.at("max_combinations").get_to(s.max_combinations);
    s.generator = generator_from(j.at("generator"));
    if (!j.at("defense").is_null()) s.defense = front_from(j.at("defense"));
    std::set<std::string> seen;
    for (const auto& [name, arr] : j.at("splits").items()) {
      auto& entries = m.splits[parse_split(name)];
      for (const auto& e : arr) {
        ManifestEntry me{e.at("trace").get<std::string>(), e.at("labels").get<std::vector<int>>()};
        if (!seen.insert(me.trace).second) {
          throw Error("invalid_manifest", "trace listed twice: " + me.trace);
        }
        LabelVector(s.num_classes, me.labels);  // validates ids < C
        entries.push_back(std::move(me));
      }
    }
    return m;
  });
}

DatasetManifest write_dataset(const fs::path& dir, const Dataset& ds) {
  DatasetManifest m;
  m.spec = ds.spec;
  m.seed = ds.seed.seed;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    auto& entries = m.splits[s];
    const auto& instances = ds.split(s);
    for (std::size_t i = 0; i < instances.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "%06zu.trace", i);
      const std::string rel = std::string("traces/") + split_name(s) + "/" + name;
      write_trace(dir / rel, instances[i].trace);
      entries.push_back({rel, instances[i].label.active()});
    }
  }
  write_file(dir / "manifest.json", manifest_to_json(m));
  return m;
}

DatasetManifest load_manifest(const fs::path& dir) {
  DatasetManifest m = manifest_from_json(read_file(dir / "manifest.json"));
  for (const auto& [split, entries] : m.splits) {
    for (const auto& e : entries) {
      if (!fs::is_regular_file(dir / e.trace)) {
        throw Error("missing_file", "manifest references missing trace " + (dir / e.trace).string());
      }
    }
  }
  return m;
}

std::vector<Instance> load_split(const fs::path& dir, const DatasetManifest& m, Split s) {
  std::vector<Instance> out;
  const auto it = m.splits.find(s);
  if (it == m.splits.end()) return out;
  for (const auto& e : it->second) {
    out.push_back({read_trace(dir / e.trace), LabelVector(m.num_classes(), e.labels)});
  }
  return out;
}

// ------------------------------------------------------------ model config

std::string model_config_to_json(const ModelConfig& c) {
  json j{{"input_slots", c.input_slots},
         {"d", c.d},
         {"kernels", c.kernels},
         {"blocks", c.blocks},
         {"heads", c.heads},
         {"w_intra", c.w_intra},
         {"w_inter", c.w_inter},
         {"ffn_width", c.ffn_width},
         {"num_classes", c.num_classes},
         {"dropout", c.dropout},
         {"conv_channels", c.conv_channels},
         {"pools", c.pools},
         {"loss", loss_mode_name(c.loss_mode)},
         {"inter_granularity", c.inter_granularity},
         {"router_interaction", c.router_interaction},
         {"embed_init_std", c.embed_init_std}};
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  return json_guard("model config", [&] {
    const json j = json::parse(text);
    ModelConfig c;
    j.at("input_slots").get_to(c.input_slots);
    j.at("d").get_to(c.d);
    j.at("kernels").get_to(c.kernels);
    j.at("blocks").get_to(c.blocks);
    j.at("heads").get_to(c.heads);
    j.at("w_intra").get_to(c.w_intra);
    j.at("w_inter").get_to(c.w_inter);
    j.at("ffn_width").get_to(c.ffn_width);
    j.at("num_classes").get_to(c.num_classes);
    j.at("dropout").get_to(c.dropout);
    j.at("conv_channels").get_to(c.conv_channels);
    j.at("pools").get_to(c.pools);
    c.loss_mode = parse_loss_mode(j.at("loss").get<std::string>());
    j.at("inter_granularity").get_to(c.inter_granularity);
    j.at("router_interaction").get_to(c.router_interaction);
    j.at("embed_init_std").get_to(c.embed_init_std);
    c.validate();
    return c;
  });
}

// -------------------------------------------------------------- checkpoint

// Layout: magic, u32 version, u64 config length, config JSON, u64 array
// count, then per array: u32 name length, name, u8 dtype (1 = float64),
// u8 trainable, u64 rows, u64 cols, row-major values. A trailing u64 holds
// FNV-1a over every preceding byte.
std::string checkpoint_to_bytes(const ModelConfig& config, const nn::ParamStore& params) {
  std::string out(kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointFormatVersion);
  const std::string cfg = model_config_to_json(config);
  put<std::uint64_t>(out, cfg.size());
  out += cfg;
  put<std::uint64_t>(out, params.size());
  for (const auto& a : params.arrays()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put<std::uint8_t>(out, 1);
    put<std::uint8_t>(out, a.trainable ? 1 : 0);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(a.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(a.value.cols()));
    for (Eigen::Index r = 0; r < a.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < a.value.cols(); ++c) put(out, a.value(r, c));
    }
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Checkpoint checkpoint_from_bytes(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < kCheckpointMagic.size() + 12 ||
      bytes.compare(0, kCheckpointMagic.size(), kCheckpointMagic) != 0) {
    throw Error("corrupt_file", origin + ": not a checkpoint");
  }
  Reader rd(bytes, origin);
  rd.take(kCheckpointMagic.size());
  const auto version = rd.get<std::uint32_t>();
  if (version != kCheckpointFormatVersion) {
    throw Error("unsupported_version", origin + ": checkpoint format v" + std::to_string(version));
  }
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  const std::uint64_t actual = fnv1a64(std::string_view(bytes.data(), bytes.size() - 8));
  if (stored != actual) throw Error("checksum_mismatch", origin + ": checkpoint checksum mismatch");

  Checkpoint ck;
  ck.checksum = stored;
  ck.config = model_config_from_json(rd.take(rd.get<std::uint64_t>()));
  const auto count = rd.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = rd.take(rd.get<std::uint32_t>());
    const auto dtype = rd.get<std::uint8_t>();
    if (dtype != 1) throw Error("corrupt_file", origin + ": unknown dtype for " + name);
    const bool trainable = rd.get<std::uint8_t>() != 0;
    const auto rows = static_cast<Eigen::Index>(rd.get<std::uint64_t>());
    const auto cols = static_cast<Eigen::Index>(rd.get<std::uint64_t>());
    const std::size_t idx = ck.params.add(name, rows, cols, 0.0, 0.0, trainable);
    nn::Mat& m = ck.params[idx];
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rd.get<double>();
    }
  }
  if (rd.pos() != bytes.size() - 8) throw Error("corrupt_file", origin + ": trailing bytes");
  return ck;
}

std::uint64_t save_checkpoint(const fs::path& path, const ModelConfig& config,
                              const nn::ParamStore& params) {
  const std::string bytes = checkpoint_to_bytes(config, params);
  write_file(path, bytes);
  std::uint64_t sum = 0;
  std::memcpy(&sum, bytes.data() + bytes.size() - 8, 8);
  return sum;
}

Checkpoint load_checkpoint(const fs::path& path) {
  return checkpoint_from_bytes(read_file(path), path.string());
}

Checkpoint load_checkpoint_for(const fs::path& path, const PrismModel& model) {
  Checkpoint ck = load_checkpoint(path);
  const auto& layout = model.layout();
  if (ck.params.size() != layout.size()) {
    throw Error("shape_mismatch", path.string() + ": array count differs from the model");
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& want = layout.array(i);
    const auto& got = ck.params.array(i);
    if (want.name != got.name || want.value.rows() != got.value.rows() ||
        want.value.cols() != got.value.cols()) {
      throw Error("shape_mismatch", path.string() + ": array " + got.name + " (" +
                                        std::to_string(got.value.rows()) + "x" +
                                        std::to_string(got.value.cols()) + ") does not match " +
                                        want.name);
    }
  }
  return ck;
}

// -------------------------------------------------------------- run config

namespace {

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(static_cast<int>(parse_int(t, what)));
  }
  return out;
}

bool parse_bool(const std::string& text, const std::string& what) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw Error("parse_error", what + ": expected a boolean, got '" + text + "'");
}

}  // namespace

void RunConfig::finalize() {
  model.input_slots = static_cast<int>(slot_count(max_seconds, slot_seconds));
  model.num_classes = data.num_classes;
  train.loss_mode = model.loss_mode;
}

void RunConfig::validate() const {
  data.validate();
  if (data.defense) data.defense->validate();
  if (!(slot_seconds > 0) || !(max_seconds > 0)) {
    throw Error("invalid_config", "slot and max seconds must be positive");
  }
  model.validate();
  train.validate();
  if (model.input_slots != slot_count(max_seconds, slot_seconds)) {
    throw Error("invalid_config", "model input slots disagree with the feature settings");
  }
  if (train.loss_mode != model.loss_mode) throw Error("invalid_config", "loss modes disagree");
  if (model.loss_mode == LossMode::kSingle && data.tabs != 1) {
    throw Error("invalid_config", "single-tab loss needs tabs = 1");
  }
  if (k_policy == KPolicy::kFixed) {
    if (ks.empty()) throw Error("invalid_config", "fixed K policy needs at least one K");
    for (int k : ks) {
      if (k < 1 || k > data.num_classes) throw Error("invalid_config", "K must lie in [1, C]");
    }
  }
  if (!(gradcheck.tolerance > 0)) throw Error("invalid_config", "gradcheck tolerance must be positive");
}

RunConfig run_config_from_text(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error("parse_error", std::string("run config: ") + e.what());
  }
  RunConfig rc;
  bool loss_given = false;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw Error("invalid_config", "run config: key '" + section + "' outside any section");
    }
    if (section == "defense") rc.data.defense = FrontParams{};
    for (const auto& [key, node] : body) {
      const std::string v = trim(node.data());
      const std::string what = section + "." + key;
      auto i = [&] { return static_cast<int>(parse_int(v, what)); };
      auto d = [&] { return parse_double(v, what); };
      bool known = true;
      if (section == "data") {
        if (key == "classes") rc.data.num_classes = i();
        else if (key == "tabs") rc.data.tabs = i();
        else if (key == "instances_per_combination") rc.data.instances_per_combination = i();
        else if (key == "offset_max") rc.data.offset_max = d();
        else if (key == "train_fraction") rc.data.train_fraction = d();
        else if (key == "val_fraction") rc.data.val_fraction = d();
        else if (key == "max_combinations") rc.data.max_combinations = i();
        else known = false;
      } else if (section == "defense") {
        auto& f = *rc.data.defense;
        if (key == "max_client_dummies") f.max_client_dummies = i();
        else if (key == "max_server_dummies") f.max_server_dummies = i();
        else if (key == "window_min") f.window_min = d();
        else if (key == "window_max") f.window_max = d();
        else known = false;
      } else if (section == "features") {
        if (key == "slot_seconds") rc.slot_seconds = d();
        else if (key == "max_seconds") rc.max_seconds = d();
        else known = false;
      } else if (section == "model") {
        auto& m = rc.model;
        if (key == "d") m.d = i();
        else if (key == "kernels") m.kernels = parse_int_list(v, what);
        else if (key == "blocks") m.blocks = i();
        else if (key == "heads") m.heads = i();
        else if (key == "w_intra") m.w_intra = i();
        else if (key == "w_inter") m.w_inter = i();
        else if (key == "ffn_width") m.ffn_width = i();
        else if (key == "dropout") m.dropout = d();
        else if (key == "conv_channels") m.conv_channels = parse_int_list(v, what);
        else if (key == "pools") m.pools = parse_int_list(v, what);
        else if (key == "loss") m.loss_mode = parse_loss_mode(v), loss_given = true;
        else if (key == "inter_granularity") m.inter_granularity = parse_bool(v, what);
        else if (key == "router_interaction") m.router_interaction = parse_bool(v, what);
        else if (key == "embed_init_std") m.embed_init_std = d();
        else known = false;
      } else if (section == "train") {
        auto& t = rc.train;
        if (key == "epochs") t.epochs = i();
        else if (key == "batch_size") t.batch_size = i();
        else if (key == "learning_rate") t.learning_rate = d();
        else if (key == "clip_norm") t.clip_norm = d();
        else if (key == "beta1") t.beta1 = d();
        else if (key == "beta2") t.beta2 = d();
        else if (key == "adam_eps") t.adam_eps = d();
        else if (key == "bn_momentum") t.bn_momentum = d();
        else if (key == "report_every") t.report_every = i();
        else if (key == "target_train_precision") t.target_train_precision = d();
        else known = false;
      } else if (section == "eval") {
        if (key == "k") rc.ks = parse_int_list(v, what);
        else if (key == "k_policy") rc.k_policy = parse_k_policy(v);
        else if (key == "split") rc.eval_split = parse_split(v);
        else known = false;
      } else if (section == "gradcheck") {
        auto& g = rc.gradcheck;
        if (key == "tolerance") g.tolerance = d();
        else if (key == "step") g.options.step = d();
        else if (key == "batch") g.options.batch = i();
        else if (key == "batch_stats") g.options.batch_stats = parse_bool(v, what);
        else if (key == "seed") g.options.seed = static_cast<std::uint64_t>(parse_int(v, what));
        else known = false;
      } else {
        throw Error("invalid_config", "run config: unknown section [" + section + "]");
      }
      if (!known) throw Error("invalid_config", "run config: unknown key " + what);
    }
  }
  if (!loss_given) rc.model.loss_mode = rc.data.tabs == 1 ? LossMode::kSingle : LossMode::kMulti;
  rc.finalize();
  return rc;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_text(read_file(path)); }

// ----------------------------------------------------------------- reports

std::string epoch_record_json(const EpochRecord& r) {
  json j{{"type", "epoch"}, {"epoch", r.epoch}, {"loss", r.loss}};
  if (r.train_precision) j["train_precision"] = *r.train_precision;
  if (r.train_map) j["train_map"] = *r.train_map;
  if (r.val_precision) j["val_precision"] = *r.val_precision;
  if (r.val_map) j["val_map"] = *r.val_map;
  return j.dump();
}

// Wall-clock times are left out so reports from identical runs compare equal.
std::string train_report_jsonl(const TrainReport& report) {
  std::string out;
  for (const auto& r : report.epochs) out += epoch_record_json(r) + "\n";
  json summary{{"type", "summary"},
               {"epochs", report.epochs.size()},
               {"stopped_early", report.stopped_early}};
  if (!report.checkpoint_path.empty()) summary["checkpoint"] = report.checkpoint_path;
  out += summary.dump() + "\n";
  return out;
}

void write_train_report(const fs::path& path, const TrainReport& report) {
  write_file(path, train_report_jsonl(report));
}

}  // namespace prismwf
