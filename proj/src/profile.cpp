#include "blosa/profile.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include "blosa/encoder.hpp"
#include "blosa/memory.hpp"

namespace blosa {

const char* const kProfileCsvHeader =
    "kind,n,r,m,analytic_elems,measured_peak_elems,forward_ms,backward_ms";

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

struct PassResult {
  std::size_t peak = 0;
  double forward_ms = 0;
  double backward_ms = 0;
};

PassResult run_pass(const ParamStore<float>& store, const Tensor<float>& input,
                    const EncoderConfig& cfg) {
  memory::PeakScope scope;
  PassResult out;
  {
    Graph<float> g;
    ParamBinder<float> binder(g, store);
    const auto t0 = Clock::now();
    const Var<float> x = variable(g, input, "x");
    const Var<float> loss = sum(bi_blosa(x, binder, cfg));
    out.forward_ms = ms_since(t0);
    const auto t1 = Clock::now();
    const Gradients<float> grads = backward(g, loss.id());
    out.backward_ms = ms_since(t1);
  }
  out.peak = scope.peak_above_baseline();
  return out;
}

}  // namespace

ProfileRecord profile_run(BenchKind kind, Index n, const ProfileOptions& opt) {
  if (opt.repeats < 3) throw std::invalid_argument("profile_run: repeats must be >= 3");
  if (n < 1 || opt.d_e < 1) throw std::invalid_argument("profile_run: n and d_e must be >= 1");

  EncoderConfig cfg;
  cfg.d_e = opt.d_e;
  cfg.d_h = opt.d_e;
  cfg.arch = kind == BenchKind::biblosa ? EncoderArch::bi_blosan : EncoderArch::full_san;
  cfg.block_len = kind == BenchKind::biblosa ? (opt.r > 0 ? opt.r : select_block_length(n)) : n;

  Rng init_rng = substream(opt.seed, "init");
  ParamStore<float> store;
  init_encoder(store, cfg, init_rng);
  Rng data_rng = substream(opt.seed, "data", static_cast<std::uint64_t>(n));
  const Tensor<float> input = uniform_init<float>({n, opt.d_e}, -1.0, 1.0, data_rng);

  run_pass(store, input, cfg);
  std::vector<double> fwd, bwd;
  std::size_t peak = 0;
  for (int i = 0; i < opt.repeats; ++i) {
    const PassResult p = run_pass(store, input, cfg);
    fwd.push_back(p.forward_ms);
    bwd.push_back(p.backward_ms);
    peak = std::max(peak, p.peak);
  }

  const CostModel cost = count_score_elements(n, cfg.block_len, opt.d_e);
  ProfileRecord rec;
  rec.kind = kind;
  rec.n = n;
  rec.r = cost.r;
  rec.m = cost.m;
  rec.analytic_elems = cost.total(kind);
  rec.measured_peak_elems = peak;
  rec.forward_ms = median(std::move(fwd));
  rec.backward_ms = median(std::move(bwd));
  return rec;
}

ScalingResult scaling_experiment(const std::vector<Index>& lengths,
                                 const std::vector<BenchKind>& kinds, const ProfileOptions& opt) {
  if (lengths.size() < 2) throw std::invalid_argument("scaling_experiment: needs at least 2 lengths");
  if (!std::is_sorted(lengths.begin(), lengths.end()) ||
      std::adjacent_find(lengths.begin(), lengths.end()) != lengths.end()) {
    throw std::invalid_argument("scaling_experiment: lengths must be strictly ascending");
  }
  ScalingResult result;
  for (BenchKind kind : kinds) {
    std::vector<double> xs, ys;
    for (Index n : lengths) {
      result.records.push_back(profile_run(kind, n, opt));
      xs.push_back(static_cast<double>(n));
      ys.push_back(static_cast<double>(result.records.back().measured_peak_elems));
    }
    result.memory_slope[kind] = loglog_slope(xs, ys);
  }
  return result;
}

void write_profile_csv(std::ostream& os, const std::vector<ProfileRecord>& records) {
  os << kProfileCsvHeader << '\n';
  for (const ProfileRecord& r : records) {
    os << bench_kind_name(r.kind) << ',' << r.n << ',' << r.r << ',' << r.m << ','
       << r.analytic_elems << ',' << r.measured_peak_elems << ',' << r.forward_ms << ','
       << r.backward_ms << '\n';
  }
}

}  // namespace blosa
