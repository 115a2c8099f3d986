#include "mfgn/valence.hpp"

#include <cmath>

#include "mfgn/error.hpp"

namespace mfgn {

namespace {

// new_row(w) = sum_x g(x) * row(w - x), rows clipped to sums 0..v.
std::vector<double> conv_step(const std::vector<double>& row, const DiscreteDistribution& g, int v) {
  std::vector<double> out(static_cast<std::size_t>(v) + 1, 0.0);
  const int b = g.size() - 1;
  for (int w = 0; w <= v; ++w) {
    double acc = 0.0;
    const int xmax = std::min(b, w);
    for (int x = 0; x <= xmax; ++x) acc += g[x] * row[static_cast<std::size_t>(w - x)];
    out[static_cast<std::size_t>(w)] = acc;
  }
  return out;
}

double row_sum(const std::vector<double>& row) {
  double s = 0.0;
  for (double x : row) s += x;
  return s;
}

void check_incoming(const ValenceFactorSpec& spec, const std::vector<DiscreteDistribution>& incoming) {
  spec.validate();
  if (static_cast<int>(incoming.size()) != spec.neighbor_count)
    throw ArgumentError("valence factor expects " + std::to_string(spec.neighbor_count) +
                        " incoming messages, got " + std::to_string(incoming.size()));
  for (const auto& g : incoming) {
    if (g.size() != spec.neighbor_domain_size)
      throw ArgumentError("incoming message length does not match neighbor domain size");
    if (!g.all_finite() || !g.all_nonnegative())
      throw ArgumentError("incoming valence message must be finite and nonnegative");
  }
}

}  // namespace

void ValenceFactorSpec::validate() const {
  if (valence_target < 0) throw ArgumentError("valence target must be >= 0");
  if (neighbor_domain_size < 2) throw ArgumentError("neighbor domain size must be >= 2");
  if (neighbor_count < 1) throw ArgumentError("neighbor count must be >= 1");
}

double dp_partial(const std::vector<DiscreteDistribution>& messages, int v) {
  if (v < 0) return 0.0;
  for (const auto& g : messages)
    if (g.size() == 0) throw ArgumentError("dp_partial: empty message");

  std::vector<double> row(static_cast<std::size_t>(v) + 1, 0.0);
  row[0] = 1.0;
  double log_scale = 0.0;
  for (const auto& g : messages) {
    row = conv_step(row, g, v);
    const double s = row_sum(row);
    if (s <= 0.0) return 0.0; // constraint unreachable from here on
    for (double& x : row) x /= s;
    log_scale += std::log(s);
  }
  const double r = row[static_cast<std::size_t>(v)];
  if (r <= 0.0) return 0.0;
  return std::exp(log_scale + std::log(r));
}

DpTable build_dp_table(const ValenceFactorSpec& spec, const std::vector<DiscreteDistribution>& incoming) {
  check_incoming(spec, incoming);
  const int t = spec.neighbor_count;
  const int v = spec.valence_target;

  DpTable table;
  table.prefix.assign(static_cast<std::size_t>(t) + 1, {});
  table.suffix.assign(static_cast<std::size_t>(t) + 1, {});

  std::vector<double> delta(static_cast<std::size_t>(v) + 1, 0.0);
  delta[0] = 1.0;

  table.prefix[0] = delta;
  for (int m = 1; m <= t; ++m) {
    auto row = conv_step(table.prefix[static_cast<std::size_t>(m) - 1], incoming[static_cast<std::size_t>(m) - 1], v);
    const double s = row_sum(row);
    if (s > 0.0)
      for (double& x : row) x /= s;
    table.prefix[static_cast<std::size_t>(m)] = std::move(row);
  }

  table.suffix[static_cast<std::size_t>(t)] = delta;
  for (int m = t - 1; m >= 0; --m) {
    auto row = conv_step(table.suffix[static_cast<std::size_t>(m) + 1], incoming[static_cast<std::size_t>(m)], v);
    const double s = row_sum(row);
    if (s > 0.0)
      for (double& x : row) x /= s;
    table.suffix[static_cast<std::size_t>(m)] = std::move(row);
  }
  return table;
}

bool ValenceMessages::any_unsatisfiable() const {
  for (auto f : unsatisfiable)
    if (f) return true;
  return false;
}

ValenceMessages valence_messages(const ValenceFactorSpec& spec,
                                 const std::vector<DiscreteDistribution>& incoming) {
  const DpTable table = build_dp_table(spec, incoming);
  const int t = spec.neighbor_count;
  const int v = spec.valence_target;
  const int b = spec.max_state();

  ValenceMessages out;
  out.messages.reserve(static_cast<std::size_t>(t));
  out.unsatisfiable.assign(static_cast<std::size_t>(t), 0);

  for (int i = 0; i < t; ++i) {
    const auto& pre = table.prefix[static_cast<std::size_t>(i)];
    const auto& suf = table.suffix[static_cast<std::size_t>(i) + 1];
    DiscreteDistribution msg(std::vector<double>(static_cast<std::size_t>(b) + 1, 0.0));
    // msg(x) proportional to (pre * suf)(v - x); only b+1 target sums needed.
    for (int x = 0; x <= b; ++x) {
      const int w = v - x;
      if (w < 0) continue;
      double acc = 0.0;
      for (int p = 0; p <= w; ++p) acc += pre[static_cast<std::size_t>(p)] * suf[static_cast<std::size_t>(w - p)];
      msg[x] = acc;
    }
    if (msg.sum() <= 0.0) {
      out.messages.push_back(DiscreteDistribution::uniform(b + 1));
      out.unsatisfiable[static_cast<std::size_t>(i)] = 1;
    } else {
      msg.normalize();
      out.messages.push_back(std::move(msg));
    }
  }
  return out;
}

ValenceMessages brute_force_valence_messages(const ValenceFactorSpec& spec,
                                             const std::vector<DiscreteDistribution>& incoming) {
  check_incoming(spec, incoming);
  const int t = spec.neighbor_count;
  const int v = spec.valence_target;
  const int b = spec.max_state();

  double configs = 1.0;
  for (int i = 0; i < t; ++i) {
    configs *= spec.neighbor_domain_size;
    if (configs > 1e6) throw CapacityError("brute-force valence enumeration over 10^6 configurations");
  }

  std::vector<std::vector<double>> acc(static_cast<std::size_t>(t),
                                       std::vector<double>(static_cast<std::size_t>(b) + 1, 0.0));
  std::vector<int> assign(static_cast<std::size_t>(t), 0);
  std::vector<double> pre(static_cast<std::size_t>(t) + 1, 1.0);
  std::vector<double> suf(static_cast<std::size_t>(t) + 1, 1.0);

  while (true) {
    int total = 0;
    for (int x : assign) total += x;
    if (total == v) {
      for (int i = 0; i < t; ++i)
        pre[static_cast<std::size_t>(i) + 1] =
            pre[static_cast<std::size_t>(i)] * incoming[static_cast<std::size_t>(i)][assign[static_cast<std::size_t>(i)]];
      suf[static_cast<std::size_t>(t)] = 1.0;
      for (int i = t - 1; i >= 0; --i)
        suf[static_cast<std::size_t>(i)] =
            suf[static_cast<std::size_t>(i) + 1] * incoming[static_cast<std::size_t>(i)][assign[static_cast<std::size_t>(i)]];
      for (int i = 0; i < t; ++i)
        acc[static_cast<std::size_t>(i)][assign[static_cast<std::size_t>(i)]] +=
            pre[static_cast<std::size_t>(i)] * suf[static_cast<std::size_t>(i) + 1];
    }
    int pos = t - 1;
    while (pos >= 0 && assign[static_cast<std::size_t>(pos)] == b) {
      assign[static_cast<std::size_t>(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++assign[static_cast<std::size_t>(pos)];
  }

  ValenceMessages out;
  out.messages.reserve(static_cast<std::size_t>(t));
  out.unsatisfiable.assign(static_cast<std::size_t>(t), 0);
  for (int i = 0; i < t; ++i) {
    DiscreteDistribution msg(acc[static_cast<std::size_t>(i)]);
    if (msg.sum() <= 0.0) {
      out.messages.push_back(DiscreteDistribution::uniform(b + 1));
      out.unsatisfiable[static_cast<std::size_t>(i)] = 1;
    } else {
      msg.normalize();
      out.messages.push_back(std::move(msg));
    }
  }
  return out;
}

ValenceTape::ValenceTape(const ValenceFactorSpec& spec, const std::vector<DiscreteDistribution>& incoming)
    : spec_(spec) {
  check_incoming(spec, incoming);
  const int t = spec.neighbor_count;
  const int v = spec.valence_target;
  const int b = spec.max_state();

  incoming_.resize(static_cast<std::size_t>(t));
  for (int i = 0; i < t; ++i) incoming_[static_cast<std::size_t>(i)] = incoming[static_cast<std::size_t>(i)].values;

  std::vector<double> delta(static_cast<std::size_t>(v) + 1, 0.0);
  delta[0] = 1.0;

  prefix_.assign(static_cast<std::size_t>(t) + 1, {});
  suffix_.assign(static_cast<std::size_t>(t) + 1, {});
  prefix_[0] = delta;
  for (int m = 1; m <= t; ++m)
    prefix_[static_cast<std::size_t>(m)] =
        conv_step(prefix_[static_cast<std::size_t>(m) - 1], incoming[static_cast<std::size_t>(m) - 1], v);
  suffix_[static_cast<std::size_t>(t)] = delta;
  for (int m = t - 1; m >= 0; --m)
    suffix_[static_cast<std::size_t>(m)] =
        conv_step(suffix_[static_cast<std::size_t>(m) + 1], incoming[static_cast<std::size_t>(m)], v);

  raw_.assign(static_cast<std::size_t>(t), std::vector<double>(static_cast<std::size_t>(b) + 1, 0.0));
  raw_sum_.assign(static_cast<std::size_t>(t), 0.0);
  outputs_.messages.reserve(static_cast<std::size_t>(t));
  outputs_.unsatisfiable.assign(static_cast<std::size_t>(t), 0);

  for (int i = 0; i < t; ++i) {
    const auto& pre = prefix_[static_cast<std::size_t>(i)];
    const auto& suf = suffix_[static_cast<std::size_t>(i) + 1];
    auto& raw = raw_[static_cast<std::size_t>(i)];
    for (int x = 0; x <= b; ++x) {
      const int w = v - x;
      if (w < 0) continue;
      double acc = 0.0;
      for (int p = 0; p <= w; ++p) acc += pre[static_cast<std::size_t>(p)] * suf[static_cast<std::size_t>(w - p)];
      raw[static_cast<std::size_t>(x)] = acc;
    }
    const double s = row_sum(raw);
    raw_sum_[static_cast<std::size_t>(i)] = s;
    if (s <= 0.0) {
      outputs_.messages.push_back(DiscreteDistribution::uniform(b + 1));
      outputs_.unsatisfiable[static_cast<std::size_t>(i)] = 1;
    } else {
      DiscreteDistribution msg(raw);
      msg.normalize();
      outputs_.messages.push_back(std::move(msg));
    }
  }
}

std::vector<std::vector<double>> ValenceTape::backward(
    const std::vector<std::vector<double>>& d_outputs) const {
  const int t = spec_.neighbor_count;
  const int v = spec_.valence_target;
  const int b = spec_.max_state();
  if (static_cast<int>(d_outputs.size()) != t)
    throw ArgumentError("valence backward: d_outputs count mismatch");

  const std::size_t width = static_cast<std::size_t>(v) + 1;
  std::vector<std::vector<double>> d_prefix(static_cast<std::size_t>(t) + 1, std::vector<double>(width, 0.0));
  std::vector<std::vector<double>> d_suffix(static_cast<std::size_t>(t) + 1, std::vector<double>(width, 0.0));
  std::vector<std::vector<double>> d_in(static_cast<std::size_t>(t),
                                        std::vector<double>(static_cast<std::size_t>(b) + 1, 0.0));

  // Per-target combination: out_i = raw_i / sum(raw_i), raw_i(x) = C_i(v-x).
  for (int i = 0; i < t; ++i) {
    if (outputs_.unsatisfiable[static_cast<std::size_t>(i)]) continue; // uniform fallback, locally constant
    const auto& dout = d_outputs[static_cast<std::size_t>(i)];
    const auto& out = outputs_.messages[static_cast<std::size_t>(i)].values;
    const double s = raw_sum_[static_cast<std::size_t>(i)];
    double dot = 0.0;
    for (int x = 0; x <= b; ++x) dot += dout[static_cast<std::size_t>(x)] * out[static_cast<std::size_t>(x)];

    const auto& pre = prefix_[static_cast<std::size_t>(i)];
    const auto& suf = suffix_[static_cast<std::size_t>(i) + 1];
    for (int x = 0; x <= b; ++x) {
      const int w = v - x;
      if (w < 0) continue;
      const double d_raw = (dout[static_cast<std::size_t>(x)] - dot) / s;
      if (d_raw == 0.0) continue;
      for (int p = 0; p <= w; ++p) {
        d_prefix[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)] +=
            d_raw * suf[static_cast<std::size_t>(w - p)];
        d_suffix[static_cast<std::size_t>(i) + 1][static_cast<std::size_t>(w - p)] +=
            d_raw * pre[static_cast<std::size_t>(p)];
      }
    }
  }

  // prefix[m] = conv_step(prefix[m-1], g_{m-1}); reverse the chain.
  for (int m = t; m >= 1; --m) {
    const auto& dpm = d_prefix[static_cast<std::size_t>(m)];
    const auto& prev = prefix_[static_cast<std::size_t>(m) - 1];
    const auto& g = incoming_[static_cast<std::size_t>(m) - 1];
    auto& dprev = d_prefix[static_cast<std::size_t>(m) - 1];
    auto& dg = d_in[static_cast<std::size_t>(m) - 1];
    for (int w = 0; w <= v; ++w) {
      const double dw = dpm[static_cast<std::size_t>(w)];
      if (dw == 0.0) continue;
      const int xmax = std::min(b, w);
      for (int x = 0; x <= xmax; ++x) {
        dprev[static_cast<std::size_t>(w - x)] += g[static_cast<std::size_t>(x)] * dw;
        dg[static_cast<std::size_t>(x)] += prev[static_cast<std::size_t>(w - x)] * dw;
      }
    }
  }

  // suffix[m] = conv_step(suffix[m+1], g_m); reverse in ascending order.
  for (int m = 1; m <= t - 1; ++m) {
    const auto& dsm = d_suffix[static_cast<std::size_t>(m)];
    const auto& next = suffix_[static_cast<std::size_t>(m) + 1];
    const auto& g = incoming_[static_cast<std::size_t>(m)];
    auto& dnext = d_suffix[static_cast<std::size_t>(m) + 1];
    auto& dg = d_in[static_cast<std::size_t>(m)];
    for (int w = 0; w <= v; ++w) {
      const double dw = dsm[static_cast<std::size_t>(w)];
      if (dw == 0.0) continue;
      const int xmax = std::min(b, w);
      for (int x = 0; x <= xmax; ++x) {
        dnext[static_cast<std::size_t>(w - x)] += g[static_cast<std::size_t>(x)] * dw;
        dg[static_cast<std::size_t>(x)] += next[static_cast<std::size_t>(w - x)] * dw;
      }
    }
  }

  return d_in;
}

}  // namespace mfgn
