#include "txnlink/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include <json.hpp>

#include "txnlink/errors.hpp"
#include "txnlink/seeding.hpp"

namespace txnlink::datagen {

using nlohmann::json;

namespace {

constexpr std::size_t kLatent = 8;
constexpr std::size_t kChannels = 4;
constexpr std::size_t kHourBins = 6;
constexpr std::int64_t kDay = 86400;
// Warm-up aggregates: counts 2, amounts 4, channels 8, hours 12, weekday 2,
// counterparts 2, external 2.
constexpr std::size_t kAggregateDims = 32;
constexpr std::size_t kTxnFeatureDims = 12;

struct Community {
  std::vector<double> centre;   // latent
  double log_amount = 0.0;
  double peak_hour = 12.0;
  std::vector<double> channel;  // distribution
  double round_rate = 0.0;
  double foreign_rate = 0.0;
  double memo = 0.0;
};

struct Customer {
  std::size_t community = 0;
  double activity = 1.0;
  std::vector<double> latent;
  std::vector<std::size_t> preferred;
};

struct Draft {
  std::int64_t timestamp = 0;
  long source = -1;  // customer index, -1 EXTERNAL
  long dest = -1;
  bool anomaly = false;
  std::vector<double> features;
};

class Generator {
 public:
  explicit Generator(const SyntheticConfig& cfg) : cfg_(cfg), rng_(derive_seed(cfg.seed, {0})) {}

  SyntheticDataset run() {
    make_world();
    const auto warm = draw(static_cast<std::size_t>(std::llround(cfg_.transactions_per_customer *
                                                                 static_cast<double>(cfg_.n_customers) *
                                                                 static_cast<double>(cfg_.warmup_days) /
                                                                 static_cast<double>(cfg_.days))),
                           cfg_.start_time - cfg_.warmup_days * kDay, cfg_.warmup_days);
    const auto live = draw(static_cast<std::size_t>(std::llround(cfg_.transactions_per_customer *
                                                                 static_cast<double>(cfg_.n_customers))),
                           cfg_.start_time, cfg_.days);
    SyntheticDataset ds;
    char buf[32];
    for (std::size_t c = 0; c < customers_.size(); ++c) {
      std::snprintf(buf, sizeof buf, "C%07zu", c);
      ids_.emplace_back(buf);
      ds.labels.customer_ids.push_back(buf);
      ds.labels.community.push_back(customers_[c].community);
    }
    ds.profiles = profiles(warm);
    for (std::size_t i = 0; i < live.size(); ++i) {
      graph::RawTransaction t;
      std::snprintf(buf, sizeof buf, "T%08zu", i);
      t.txn_id = buf;
      t.source = live[i].source < 0 ? graph::kExternal : ids_[static_cast<std::size_t>(live[i].source)];
      t.dest = live[i].dest < 0 ? graph::kExternal : ids_[static_cast<std::size_t>(live[i].dest)];
      t.timestamp = live[i].timestamp;
      t.features = live[i].features;
      t.features.resize(cfg_.txn_dim, 0.0);
      if (live[i].anomaly) ds.labels.anomalous_txns.push_back(t.txn_id);
      ds.transactions.push_back(std::move(t));
    }
    return ds;
  }

 private:
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(rng_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  void make_world() {
    const std::size_t k = cfg_.n_communities;
    for (std::size_t i = 0; i < k; ++i) {
      Community c;
      for (std::size_t d = 0; d < kLatent; ++d) c.centre.push_back(normal());
      c.log_amount = 4.0 + 2.0 * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(1, k - 1)) +
                     normal(0.0, 0.2);
      c.peak_hour = 8.0 + 12.0 * uniform();
      double total = 0.0;
      for (std::size_t ch = 0; ch < kChannels; ++ch) {
        c.channel.push_back(std::gamma_distribution<double>(2.0, 1.0)(rng_));
        total += c.channel.back();
      }
      for (auto& p : c.channel) p /= total;
      c.round_rate = 0.1 + 0.4 * uniform();
      c.foreign_rate = 0.05 + 0.3 * uniform();
      c.memo = normal(0.0, 0.5);
      communities_.push_back(std::move(c));
    }
    // Balanced, shuffled community membership.
    std::vector<std::size_t> membership(cfg_.n_customers);
    for (std::size_t i = 0; i < membership.size(); ++i) membership[i] = i % k;
    std::shuffle(membership.begin(), membership.end(), rng_);
    members_.assign(k, {});
    for (std::size_t i = 0; i < cfg_.n_customers; ++i) {
      Customer c;
      c.community = membership[i];
      c.activity = std::exp(normal(0.0, 0.5));
      for (std::size_t d = 0; d < kLatent; ++d)
        c.latent.push_back(communities_[c.community].centre[d] + normal(0.0, cfg_.profile_noise));
      members_[c.community].push_back(i);
      customers_.push_back(std::move(c));
    }
    for (auto& c : customers_) {
      const auto& pool = members_[c.community];
      const std::size_t want = std::min(cfg_.preferred_counterparts, pool.size() > 1 ? pool.size() - 1 : 0);
      std::set<std::size_t> chosen;
      while (chosen.size() < want) {
        const std::size_t p = pool[pick(pool.size())];
        if (&customers_[p] != &c) chosen.insert(p);
      }
      c.preferred.assign(chosen.begin(), chosen.end());
    }
    cumulative_.clear();
    double acc = 0.0;
    for (const auto& c : customers_) cumulative_.push_back(acc += c.activity);
    proj_.resize((cfg_.customer_dim > kAggregateDims ? cfg_.customer_dim - kAggregateDims : 0) * kLatent);
    for (auto& w : proj_) w = normal(0.0, 1.0 / std::sqrt(static_cast<double>(kLatent)));
  }

  std::size_t weighted_customer() {
    const double r = uniform() * cumulative_.back();
    return static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), r) - cumulative_.begin());
  }

  std::size_t other_community_member(std::size_t community) {
    std::size_t k;
    do k = pick(cfg_.n_communities);
    while (k == community);
    return members_[k][pick(members_[k].size())];
  }

  std::vector<double> features(const Community& com, std::int64_t ts, bool anomaly) {
    std::vector<double> f(kTxnFeatureDims, 0.0);
    double log_amount = com.log_amount + normal(0.0, cfg_.amount_spread);
    if (anomaly) log_amount = 9.5 + normal(0.0, 0.5);
    const double hour = static_cast<double>((ts % kDay) / 3600);
    const double dow = static_cast<double>((ts / kDay) % 7);
    const double tau = 2.0 * std::numbers::pi;
    f[0] = log_amount;
    f[1] = std::sin(tau * hour / 24.0);
    f[2] = std::cos(tau * hour / 24.0);
    f[3] = std::sin(tau * dow / 7.0);
    f[4] = std::cos(tau * dow / 7.0);
    std::discrete_distribution<std::size_t> ch(com.channel.begin(), com.channel.end());
    f[5 + ch(rng_)] = 1.0;
    f[9] = uniform() < com.round_rate ? 1.0 : 0.0;
    f[10] = uniform() < com.foreign_rate ? 1.0 : 0.0;
    f[11] = com.memo + normal();
    return f;
  }

  std::vector<Draft> draw(std::size_t count, std::int64_t start, std::int64_t days) {
    std::vector<Draft> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Draft d;
      const std::size_t a = weighted_customer();
      const auto& ca = customers_[a];
      const auto& com = communities_[ca.community];
      std::size_t b;
      const double u = uniform();
      if (u < cfg_.anomaly_rate) {
        d.anomaly = true;
        b = other_community_member(ca.community);
      } else if (u < cfg_.anomaly_rate + cfg_.background_cross_rate) {
        b = other_community_member(ca.community);
      } else if (!ca.preferred.empty() && uniform() < cfg_.preferred_rate) {
        b = ca.preferred[pick(ca.preferred.size())];
      } else {
        const auto& pool = members_[ca.community];
        do b = pool[pick(pool.size())];
        while (b == a && pool.size() > 1);
      }
      // Direction of the money flow is symmetric within the pair.
      const bool a_sends = uniform() < 0.5;
      d.source = static_cast<long>(a_sends ? a : b);
      d.dest = static_cast<long>(a_sends ? b : a);
      if (!d.anomaly && uniform() < cfg_.external_rate) (uniform() < 0.5 ? d.source : d.dest) = -1;
      const std::int64_t day = static_cast<std::int64_t>(pick(static_cast<std::size_t>(days)));
      double hour = std::fmod(com.peak_hour + normal(0.0, 3.0), 24.0);
      if (hour < 0) hour += 24.0;
      d.timestamp = start + day * kDay + static_cast<std::int64_t>(hour * 3600.0);
      d.features = features(com, d.timestamp, d.anomaly);
      out.push_back(std::move(d));
    }
    std::stable_sort(out.begin(), out.end(), [](const Draft& x, const Draft& y) { return x.timestamp < y.timestamp; });
    return out;
  }

  std::vector<graph::CustomerProfile> profiles(const std::vector<Draft>& warm) {
    const std::size_t n = customers_.size();
    struct Acc {
      double count[2] = {0, 0};
      double amount[2] = {0, 0};
      double amount_sq[2] = {0, 0};
      double channel[2][kChannels] = {};
      double hours[2][kHourBins] = {};
      double weekday[2] = {0, 0};
      std::set<long> partners[2];
      double external[2] = {0, 0};
    };
    std::vector<Acc> acc(n);
    for (const auto& d : warm) {
      for (int side = 0; side < 2; ++side) {
        const long self = side == 0 ? d.source : d.dest;
        const long other = side == 0 ? d.dest : d.source;
        if (self < 0) continue;
        auto& a = acc[static_cast<std::size_t>(self)];
        a.count[side] += 1;
        a.amount[side] += d.features[0];
        a.amount_sq[side] += d.features[0] * d.features[0];
        for (std::size_t ch = 0; ch < kChannels; ++ch) a.channel[side][ch] += d.features[5 + ch];
        const auto bin = static_cast<std::size_t>((d.timestamp % kDay) / (kDay / static_cast<std::int64_t>(kHourBins)));
        a.hours[side][std::min(bin, kHourBins - 1)] += 1;
        a.weekday[side] += ((d.timestamp / kDay) % 7) < 5 ? 1.0 : 0.0;
        if (other < 0)
          a.external[side] += 1;
        else
          a.partners[side].insert(other);
      }
    }
    std::vector<graph::CustomerProfile> out;
    for (std::size_t c = 0; c < n; ++c) {
      const auto& a = acc[c];
      std::vector<double> f;
      f.reserve(cfg_.customer_dim);
      for (int s = 0; s < 2; ++s) f.push_back(std::log1p(a.count[s]));
      for (int s = 0; s < 2; ++s) {
        const double m = a.count[s] > 0 ? a.amount[s] / a.count[s] : 0.0;
        const double v = a.count[s] > 0 ? std::max(0.0, a.amount_sq[s] / a.count[s] - m * m) : 0.0;
        f.push_back(m);
        f.push_back(std::sqrt(v));
      }
      for (int s = 0; s < 2; ++s)
        for (std::size_t ch = 0; ch < kChannels; ++ch) f.push_back(a.count[s] > 0 ? a.channel[s][ch] / a.count[s] : 0.0);
      for (int s = 0; s < 2; ++s)
        for (std::size_t b = 0; b < kHourBins; ++b) f.push_back(a.count[s] > 0 ? a.hours[s][b] / a.count[s] : 0.0);
      for (int s = 0; s < 2; ++s) f.push_back(a.count[s] > 0 ? a.weekday[s] / a.count[s] : 0.0);
      for (int s = 0; s < 2; ++s) f.push_back(std::log1p(static_cast<double>(a.partners[s].size())));
      for (int s = 0; s < 2; ++s) f.push_back(a.count[s] > 0 ? a.external[s] / a.count[s] : 0.0);
      // Static attributes: a noisy linear view of the latent profile.
      const auto& z = customers_[c].latent;
      const std::size_t extra = proj_.size() / kLatent;
      for (std::size_t r = 0; r < extra; ++r) {
        double v = 0.0;
        for (std::size_t d = 0; d < kLatent; ++d) v += proj_[r * kLatent + d] * z[d];
        f.push_back(v + normal(0.0, 0.5));
      }
      f.resize(cfg_.customer_dim, 0.0);
      out.push_back({ids_[c], std::move(f)});
    }
    return out;
  }

  SyntheticConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<Community> communities_;
  std::vector<Customer> customers_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<double> cumulative_;
  std::vector<double> proj_;
  std::vector<std::string> ids_;
};

}  // namespace

void SyntheticConfig::validate() const {
  if (n_customers == 0) throw ConfigError("n_customers must be positive");
  if (n_communities == 0) throw ConfigError("n_communities must be positive");
  if (n_communities > n_customers) throw ConfigError("more communities than customers");
  if (n_communities < 2 && anomaly_rate > 0.0) throw ConfigError("cross-community anomalies need two communities");
  if (!(transactions_per_customer > 0.0)) throw ConfigError("transactions_per_customer must be positive");
  if (customer_dim < kAggregateDims) throw ConfigError("customer_dim must be at least " + std::to_string(kAggregateDims));
  if (txn_dim < kTxnFeatureDims) throw ConfigError("txn_dim must be at least " + std::to_string(kTxnFeatureDims));
  for (double r : {anomaly_rate, external_rate, preferred_rate, background_cross_rate})
    if (r < 0.0 || r > 1.0) throw ConfigError("rates must lie in [0,1]");
  if (anomaly_rate + background_cross_rate > 1.0) throw ConfigError("anomaly and cross-community rates exceed 1");
  if (days <= 0 || warmup_days < 0) throw ConfigError("time spans must be positive");
  if (profile_noise < 0.0 || amount_spread < 0.0) throw ConfigError("noise levels must be non-negative");
}

void to_json(json& j, const SyntheticConfig& c) {
  j = json{{"n_customers", c.n_customers},
           {"n_communities", c.n_communities},
           {"transactions_per_customer", c.transactions_per_customer},
           {"customer_dim", c.customer_dim},
           {"txn_dim", c.txn_dim},
           {"anomaly_rate", c.anomaly_rate},
           {"external_rate", c.external_rate},
           {"start_time", c.start_time},
           {"days", c.days},
           {"warmup_days", c.warmup_days},
           {"preferred_counterparts", c.preferred_counterparts},
           {"preferred_rate", c.preferred_rate},
           {"background_cross_rate", c.background_cross_rate},
           {"profile_noise", c.profile_noise},
           {"amount_spread", c.amount_spread},
           {"seed", c.seed}};
}

SyntheticConfig synthetic_config_from_json(const json& j) {
  SyntheticConfig c;
  try {
    c.n_customers = j.value("n_customers", c.n_customers);
    c.n_communities = j.value("n_communities", c.n_communities);
    c.transactions_per_customer = j.value("transactions_per_customer", c.transactions_per_customer);
    c.customer_dim = j.value("customer_dim", c.customer_dim);
    c.txn_dim = j.value("txn_dim", c.txn_dim);
    c.anomaly_rate = j.value("anomaly_rate", c.anomaly_rate);
    c.external_rate = j.value("external_rate", c.external_rate);
    c.start_time = j.value("start_time", c.start_time);
    c.days = j.value("days", c.days);
    c.warmup_days = j.value("warmup_days", c.warmup_days);
    c.preferred_counterparts = j.value("preferred_counterparts", c.preferred_counterparts);
    c.preferred_rate = j.value("preferred_rate", c.preferred_rate);
    c.background_cross_rate = j.value("background_cross_rate", c.background_cross_rate);
    c.profile_noise = j.value("profile_noise", c.profile_noise);
    c.amount_spread = j.value("amount_spread", c.amount_spread);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic config: ") + e.what());
  }
  c.validate();
  return c;
}

SyntheticDataset generate(const SyntheticConfig& cfg) {
  cfg.validate();
  return Generator(cfg).run();
}

Holdout holdout_split(std::span<const graph::RawTransaction> txns, std::int64_t boundary) {
  Holdout h;
  for (const auto& t : txns) (t.timestamp < boundary ? h.train : h.test).push_back(t);
  return h;
}

void write_labels(const std::string& path, const Labels& labels) {
  json communities = json::object();
  for (std::size_t i = 0; i < labels.customer_ids.size(); ++i) communities[labels.customer_ids[i]] = labels.community[i];
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path);
  out << json{{"communities", communities}, {"anomalous_transactions", labels.anomalous_txns}}.dump() << '\n';
}

Labels read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot read " + path);
  try {
    const auto j = json::parse(in);
    Labels l;
    for (const auto& [id, k] : j.at("communities").items()) {
      l.customer_ids.push_back(id);
      l.community.push_back(k.get<std::size_t>());
    }
    l.anomalous_txns = j.at("anomalous_transactions").get<std::vector<std::string>>();
    return l;
  } catch (const json::exception& e) {
    throw IngestionError(path + ": " + e.what());
  }
}

}  // namespace txnlink::datagen
