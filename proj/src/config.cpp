#include "hyperinv/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "hyperinv/error.hpp"

namespace hyperinv {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view key, std::string_view s) {
  std::string str(s);
  char* end = nullptr;
  const double v = std::strtod(str.c_str(), &end);
  if (str.empty() || end != str.c_str() + str.size())
    throw Error("config: '" + std::string(key) + "' expects a number, got '" + str + "'");
  return v;
}

std::uint64_t parse_uint(std::string_view key, std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw Error("config: '" + std::string(key) + "' expects a non-negative integer, got '" +
                std::string(s) + "'");
  return v;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, std::string_view)> set;
};

template <class T>
Field uint_field(const char* key, T TrainConfig::*outer, std::size_t T::*member) {
  return {key, [=](const TrainConfig& c) { return std::to_string(c.*outer.*member); },
          [=](TrainConfig& c, std::string_view v) { c.*outer.*member = parse_uint(key, v); }};
}
template <class T>
Field u64_field(const char* key, T TrainConfig::*outer, std::uint64_t T::*member) {
  return {key, [=](const TrainConfig& c) { return std::to_string(c.*outer.*member); },
          [=](TrainConfig& c, std::string_view v) { c.*outer.*member = parse_uint(key, v); }};
}
template <class T>
Field double_field(const char* key, T TrainConfig::*outer, double T::*member) {
  return {key, [=](const TrainConfig& c) { return fmt_double(c.*outer.*member); },
          [=](TrainConfig& c, std::string_view v) { c.*outer.*member = parse_double(key, v); }};
}

const std::vector<Field>& fields() {
  using C = TrainConfig;
  static const std::vector<Field> f = {
      {"seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, std::string_view v) { c.seed = parse_uint("seed", v); }},
      uint_field("toy.resolution", &C::toy, &ToyDims::resolution),
      uint_field("toy.w_dim", &C::toy, &ToyDims::w_dim),
      uint_field("toy.channel_base", &C::toy, &ToyDims::channel_base),
      uint_field("toy.appearance_channels", &C::toy, &ToyDims::appearance_channels),
      uint_field("toy.appearance_size", &C::toy, &ToyDims::appearance_size),
      uint_field("hyper.D", &C::hyper, &HyperConfig::hidden_dim),
      uint_field("hyper.F", &C::hyper, &HyperConfig::feature_dim),
      {"hyper.appearance",
       [](const C& c) { return c.hyper.appearance == AppearanceMode::Fused ? "fused" : "x-only"; },
       [](C& c, std::string_view v) {
         if (v == "fused") c.hyper.appearance = AppearanceMode::Fused;
         else if (v == "x-only") c.hyper.appearance = AppearanceMode::XOnly;
         else throw Error("config: hyper.appearance must be fused or x-only");
       }},
      {"hyper.code",
       [](const C& c) { return c.hyper.code == CodeSharing::PerLayer ? "per-layer" : "shared"; },
       [](C& c, std::string_view v) {
         if (v == "per-layer") c.hyper.code = CodeSharing::PerLayer;
         else if (v == "shared") c.hyper.code = CodeSharing::Shared;
         else throw Error("config: hyper.code must be per-layer or shared");
       }},
      double_field("loss.lambda_pixel", &C::loss, &LossConfig::lambda_pixel),
      double_field("loss.lambda_perc", &C::loss, &LossConfig::lambda_perc),
      double_field("loss.lambda_id", &C::loss, &LossConfig::lambda_id),
      double_field("loss.lambda_adv", &C::loss, &LossConfig::lambda_adv),
      double_field("loss.r1_gamma", &C::loss, &LossConfig::r1_gamma),
      u64_field("loss.proxy_seed", &C::loss, &LossConfig::proxy_seed),
      double_field("train.lr", &C::train, &ScheduleConfig::lr),
      uint_field("train.batch_size_warm", &C::train, &ScheduleConfig::batch_size_warm),
      uint_field("train.batch_size_adv", &C::train, &ScheduleConfig::batch_size_adv),
      uint_field("train.warmup_iters", &C::train, &ScheduleConfig::warmup_iters),
      uint_field("train.total_iters", &C::train, &ScheduleConfig::total_iters),
      uint_field("train.log_interval", &C::train, &ScheduleConfig::log_interval),
      uint_field("train.checkpoint_interval", &C::train, &ScheduleConfig::checkpoint_interval),
      uint_field("pretrain.iters", &C::pretrain, &PretrainConfig::iters),
      uint_field("pretrain.batch_size", &C::pretrain, &PretrainConfig::batch_size),
      double_field("pretrain.lr", &C::pretrain, &PretrainConfig::lr),
      {"data.mode",
       [](const C& c) {
         return c.data.mode == DataMode::SelfInversion ? "self-inversion" : "procedural";
       },
       [](C& c, std::string_view v) {
         if (v == "self-inversion") c.data.mode = DataMode::SelfInversion;
         else if (v == "procedural") c.data.mode = DataMode::Procedural;
         else throw Error("config: data.mode must be self-inversion or procedural");
       }},
      u64_field("data.seed", &C::data, &DataConfig::seed),
      uint_field("data.train_size", &C::data, &DataConfig::train_size),
      uint_field("data.test_size", &C::data, &DataConfig::test_size),
      {"edit.edit_gamma", [](const C& c) { return fmt_double(c.edit_gamma); },
       [](C& c, std::string_view v) { c.edit_gamma = parse_double("edit.edit_gamma", v); }},
      uint_field("bench.latent_steps", &C::bench, &BenchConfig::latent_steps),
      double_field("bench.latent_lr", &C::bench, &BenchConfig::latent_lr),
      uint_field("bench.finetune_steps", &C::bench, &BenchConfig::finetune_steps),
      double_field("bench.finetune_lr", &C::bench, &BenchConfig::finetune_lr),
      uint_field("metrics.ms_ssim_scales", &C::metrics, &MetricsConfig::ms_ssim_scales),
      double_field("metrics.ssim_k1", &C::metrics, &MetricsConfig::ssim_k1),
      double_field("metrics.ssim_k2", &C::metrics, &MetricsConfig::ssim_k2),
  };
  return f;
}

Profile parse_profile(std::string_view v) {
  if (v == "faces-analog") return Profile::FacesAnalog;
  if (v == "church-analog") return Profile::ChurchAnalog;
  throw Error("config: profile must be faces-analog or church-analog, got '" + std::string(v) +
              "'");
}

}  // namespace

std::string_view profile_name(Profile p) {
  return p == Profile::FacesAnalog ? "faces-analog" : "church-analog";
}

void apply_profile(TrainConfig& cfg, Profile profile) {
  cfg.profile = profile;
  cfg.loss.lambda_pixel = 1.0;
  cfg.loss.lambda_perc = 0.8;
  if (profile == Profile::FacesAnalog) {
    cfg.loss.lambda_id = 0.1;
    cfg.loss.lambda_adv = 0.005;
    cfg.loss.r1_gamma = 10.0;
  } else {
    cfg.loss.lambda_id = 0.5;
    cfg.loss.lambda_adv = 0.15;
    cfg.loss.r1_gamma = 100.0;
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error("config: " + m); };
  if (!(train.lr > 0.0)) fail("train.lr must be positive");
  if (train.warmup_iters > train.total_iters) fail("train.warmup_iters exceeds train.total_iters");
  if (train.batch_size_warm == 0 || train.batch_size_adv == 0 || pretrain.batch_size == 0)
    fail("batch sizes must be positive");
  for (double v : {loss.lambda_pixel, loss.lambda_perc, loss.lambda_id, loss.lambda_adv,
                   loss.r1_gamma})
    if (!(v >= 0.0) || !std::isfinite(v)) fail("loss weights must be finite and nonnegative");
  std::size_t r = toy.resolution;
  if (r < 8 || (r & (r - 1))) fail("toy.resolution must be a power of two >= 8");
  if (toy.appearance_size != 4) fail("toy.appearance_size must be 4");
  if (toy.channel_base < 2 || toy.channel_base % 2) fail("toy.channel_base must be even");
  if (toy.w_dim == 0 || toy.appearance_channels == 0) fail("toy dimensions must be positive");
  if (hyper.hidden_dim == 0 || hyper.feature_dim == 0) fail("hyper.D and hyper.F must be positive");
  if (metrics.ms_ssim_scales == 0) fail("metrics.ms_ssim_scales must be positive");
  if (data.train_size == 0) fail("data.train_size must be positive");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys{"profile"};
  for (const Field& f : fields()) keys.emplace_back(f.key);
  return keys;
}

std::string dump_config(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "profile = " << profile_name(cfg.profile) << '\n';
  for (const Field& f : fields()) os << f.key << " = " << f.get(cfg) << '\n';
  return os.str();
}

void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  if (key == "profile") {
    apply_profile(cfg, parse_profile(value));
    return;
  }
  for (const Field& f : fields())
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  throw Error("config: unknown key '" + std::string(key) + "'");
}

TrainConfig parse_config(std::string_view text) {
  struct Entry {
    std::string key, value;
    int line;
  };
  std::vector<Entry> entries;
  std::set<std::string> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (!seen.insert(key).second)
      throw Error("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    entries.push_back({std::move(key), std::move(value), line_no});
  }
  TrainConfig cfg;
  auto apply = [&](const Entry& e) {
    try {
      set_config_value(cfg, e.key, e.value);
    } catch (const Error& err) {
      throw Error("config line " + std::to_string(e.line) + ": " + err.what());
    }
  };
  for (const Entry& e : entries)
    if (e.key == "profile") apply(e);
  for (const Entry& e : entries)
    if (e.key != "profile") apply(e);
  cfg.validate();
  return cfg;
}

}  // namespace hyperinv
