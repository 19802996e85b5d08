#include "dgadr/data.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

using namespace dgadr;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.num_domains = 3;
  c.num_classes = 3;
  c.feature_dim = 4;
  c.samples_per_domain = 60;
  c.class_skew = 2.0;
  c.domain_shift_scale = 0.7;
  c.intra_domain_subclusters = 2;
  c.noise_std = 0.5;
  c.seed = 7;
  return c;
}

std::string to_csv(const Dataset &ds) {
  std::ostringstream out;
  write_dataset(out, ds);
  return out.str();
}

Dataset parse(const std::string &text, const LoadOptions &opts = {}) {
  std::istringstream in(text);
  return read_dataset(in, "test.csv", opts);
}

}  // namespace

TEST(GenerateSynthetic, SameSeedGivesByteIdenticalDatasets) {
  const auto a = generate_synthetic(small_config());
  const auto b = generate_synthetic(small_config());
  EXPECT_EQ(a, b);
  EXPECT_EQ(to_csv(a), to_csv(b));
  SynthConfig other = small_config();
  other.seed = 8;
  EXPECT_NE(to_csv(a), to_csv(generate_synthetic(other)));
}

TEST(GenerateSynthetic, ZeroShiftWithoutNoiseRepeatsPointSetsAcrossDomains) {
  SynthConfig c = small_config();
  c.domain_shift_scale = 0.0;
  c.intra_domain_subclusters = 1;
  c.noise_std = 0.0;
  const auto ds = generate_synthetic(c);
  std::map<int, std::map<int, std::vector<Vector>>> by_domain;  // domain -> class -> points
  for (const auto &s : ds.samples()) by_domain[s.domain][s.label].push_back(s.features);
  for (int d = 1; d < c.num_domains; ++d)
    for (int y = 0; y < c.num_classes; ++y) {
      ASSERT_EQ(by_domain[d][y].size(), by_domain[0][y].size());
      for (std::size_t i = 0; i < by_domain[d][y].size(); ++i) EXPECT_EQ(by_domain[d][y][i], by_domain[0][y][i]);
    }
}

TEST(GenerateSynthetic, BalancedWhenSkewIsOne) {
  SynthConfig c = small_config();
  c.class_skew = 1.0;
  c.samples_per_domain = 61;
  const auto counts = generate_synthetic(c).cell_counts();
  for (int d = 0; d < c.num_domains; ++d) {
    std::size_t lo = SIZE_MAX, hi = 0;
    for (int y = 0; y < c.num_classes; ++y) {
      lo = std::min(lo, counts.at({y, d}));
      hi = std::max(hi, counts.at({y, d}));
    }
    EXPECT_LE(hi - lo, 1u);
  }
}

TEST(GenerateSynthetic, ClassSizesFollowGeometricSkew) {
  const auto counts = class_counts(1000, 4, 3.0);
  EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), 0), 1000);
  for (std::size_t y = 1; y < counts.size(); ++y) EXPECT_GT(counts[y - 1], counts[y]);
  EXPECT_NEAR(static_cast<double>(counts.front()) / counts.back(), 3.0, 0.05);
}

TEST(GenerateSynthetic, RejectsFeatureDimBelowTwo) {
  SynthConfig c = small_config();
  c.feature_dim = 1;
  EXPECT_THROW(generate_synthetic(c), Error);
  c = small_config();
  c.class_skew = 0.5;
  EXPECT_THROW(generate_synthetic(c), Error);
}

TEST(GenerateSynthetic, ZeroShiftClassMeansAgreeAcrossDomains) {
  SynthConfig c = small_config();
  c.domain_shift_scale = 0.0;
  c.intra_domain_subclusters = 1;
  c.noise_std = 1.0;
  c.class_skew = 1.0;
  c.samples_per_domain = 3000;
  const auto ds = generate_synthetic(c);
  std::map<std::pair<int, int>, Vector> sums;
  std::map<std::pair<int, int>, int> n;
  for (const auto &s : ds.samples()) {
    auto [it, ins] = sums.try_emplace({s.label, s.domain}, Vector::Zero(c.feature_dim));
    it->second += s.features;
    ++n[{s.label, s.domain}];
  }
  for (int y = 0; y < c.num_classes; ++y)
    for (int d = 1; d < c.num_domains; ++d) {
      const Vector m0 = sums[{y, 0}] / n[{y, 0}];
      const Vector md = sums[{y, d}] / n[{y, d}];
      const double tol = 3.0 * c.noise_std / std::sqrt(static_cast<double>(n[{y, d}]));
      EXPECT_LT((m0 - md).cwiseAbs().maxCoeff(), tol * std::sqrt(2.0)) << "class " << y << " domain " << d;
    }
}

TEST(LoadDataset, ParsesSmallFile) {
  const auto ds = parse("f0,f1,label,domain\n0.5,1,0,0\n-2,3.25,1,0\n1e-3,0,1,0\n");
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.num_classes(), 2);
  EXPECT_EQ(ds.num_domains(), 1);
  EXPECT_EQ(ds.feature_dim(), 2);
  EXPECT_DOUBLE_EQ(ds[1].features[1], 3.25);
  EXPECT_EQ(ds[2].label, 1);
}

TEST(LoadDataset, RejectsNaNAndMalformedRowsWithLineNumbers) {
  try {
    parse("f0,f1,label,domain\n0,1,0,0\nnan,1,0,0\n");
    FAIL() << "NaN accepted";
  } catch (const Error &e) {
    EXPECT_NE(std::string(e.what()).find("test.csv:3"), std::string::npos) << e.what();
  }
  try {
    parse("f0,f1,label,domain\n0,1,0,0\n0,1,0,0\n1,abc,0,0\n");
    FAIL() << "malformed value accepted";
  } catch (const Error &e) {
    EXPECT_NE(std::string(e.what()).find("test.csv:4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse("f0,f1,label,domain\n0,1,0\n"), Error);
  EXPECT_THROW(parse("f0,f1,label,domain\n0,1,-1,0\n"), Error);
  EXPECT_THROW(parse("x,y,label,domain\n0,1,0,0\n"), Error);
}

TEST(LoadDataset, EnforcesDeclaredRanges) {
  const std::string text = "f0,f1,label,domain\n0,1,0,0\n0,1,2,1\n";
  EXPECT_NO_THROW(parse(text));
  EXPECT_THROW(parse(text, {2, 0}), Error);
  EXPECT_THROW(parse(text, {0, 1}), Error);
  EXPECT_NO_THROW(parse(text, {3, 2}));
}

TEST(LoadDataset, MissingFileNamesPath) {
  try {
    load_dataset("/nonexistent/dir/data.csv");
    FAIL();
  } catch (const Error &e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/data.csv"), std::string::npos);
  }
}

TEST(LoadDataset, RoundTripThroughFileReproducesEveryField) {
  const auto original = generate_synthetic(small_config());
  const auto path = (std::filesystem::temp_directory_path() / "dgadr_roundtrip.csv").string();
  save_dataset(original, path);
  const auto loaded = load_dataset(path);
  std::remove(path.c_str());
  ASSERT_EQ(loaded.size(), original.size());
  EXPECT_EQ(loaded.num_classes(), original.num_classes());
  EXPECT_EQ(loaded.domain_ids(), original.domain_ids());
  EXPECT_EQ(loaded.feature_dim(), original.feature_dim());
  for (std::size_t i = 0; i < original.size(); ++i) {
    EXPECT_EQ(loaded[i].label, original[i].label);
    EXPECT_EQ(loaded[i].domain, original[i].domain);
    for (int j = 0; j < original.feature_dim(); ++j) EXPECT_EQ(loaded[i].features[j], original[i].features[j]);
  }
}

TEST(SplitLeaveOneOut, PartitionsByDomain) {
  const auto ds = generate_synthetic(small_config());
  const auto split = split_leave_one_out(ds, 1);
  EXPECT_EQ(split.source.domain_ids(), (std::vector<int>{0, 2}));
  EXPECT_EQ(split.source.num_domains(), 2);
  EXPECT_EQ(split.source.size() + split.target.size(), ds.size());
  for (const auto &s : split.source.samples()) EXPECT_NE(s.domain, 1);
  for (const auto &s : split.target.samples()) EXPECT_EQ(s.domain, 1);
  EXPECT_THROW(split_leave_one_out(ds, 5), Error);
}

TEST(SplitLeaveOneOut, SevenDomainsGiveSevenDistinctExperiments) {
  SynthConfig c = small_config();
  c.num_domains = 7;
  c.samples_per_domain = 10;
  const auto ds = generate_synthetic(c);
  std::set<std::vector<int>> sources;
  for (int t : ds.domain_ids()) {
    const auto split = split_leave_one_out(ds, t);
    EXPECT_EQ(split.source.num_domains(), 6);
    sources.insert(split.source.domain_ids());
  }
  EXPECT_EQ(sources.size(), 7u);
}

TEST(SplitLeaveOneOut, PropertyDisjointAndExhaustive) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthConfig c = small_config();
    c.seed = seed;
    c.num_domains = 2 + static_cast<int>(seed % 4);
    c.samples_per_domain = 5 + static_cast<int>(seed);
    const auto ds = generate_synthetic(c);
    for (int t : ds.domain_ids()) {
      const auto split = split_leave_one_out(ds, t);
      std::multiset<std::string> all, parts;
      for (const auto &s : ds.samples()) all.insert(to_csv(Dataset({s}, ds.num_classes(), {s.domain}, ds.feature_dim())));
      for (const auto *part : {&split.source, &split.target})
        for (const auto &s : part->samples())
          parts.insert(to_csv(Dataset({s}, ds.num_classes(), {s.domain}, ds.feature_dim())));
      EXPECT_EQ(all, parts);
    }
  }
}

TEST(SampleMinibatch, EvenSplitAcrossFourDomains) {
  SynthConfig c = small_config();
  c.num_domains = 4;
  const auto ds = generate_synthetic(c);
  SamplerState state(ds, 3);
  const auto b = sample_minibatch(ds, 128, state);
  std::map<int, int> per_domain;
  for (int d : b.domains) ++per_domain[d];
  for (int d = 0; d < 4; ++d) EXPECT_EQ(per_domain[d], 32);
  EXPECT_EQ(b.size(), 128);
}

TEST(SampleMinibatch, RemainderGoesRoundRobinInDomainOrder) {
  const auto ds = generate_synthetic(small_config());
  SamplerState state(ds, 3);
  const auto b = sample_minibatch(ds, 8, state);
  std::map<int, int> per_domain;
  for (int d : b.domains) ++per_domain[d];
  EXPECT_EQ(per_domain[0], 3);
  EXPECT_EQ(per_domain[1], 3);
  EXPECT_EQ(per_domain[2], 2);
}

TEST(SampleMinibatch, RejectsBatchSmallerThanDomainCount) {
  const auto ds = generate_synthetic(small_config());
  SamplerState state(ds, 0);
  EXPECT_THROW(sample_minibatch(ds, 2, state), Error);
}

TEST(SampleMinibatch, WithoutReplacementWithinAPass) {
  const auto ds = generate_synthetic(small_config());  // 60 per domain
  SamplerState state(ds, 11);
  std::map<int, std::set<std::string>> seen;
  for (int step = 0; step < 10; ++step) {  // 10 x 6 = 60 draws per domain: exactly one pass
    const auto b = sample_minibatch(ds, 18, state);
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      std::ostringstream key;
      key << b.features.row(i);
      EXPECT_TRUE(seen[b.domains[static_cast<std::size_t>(i)]].insert(key.str()).second);
    }
  }
  for (int d = 0; d < 3; ++d) EXPECT_EQ(seen[d].size(), 60u);
}

TEST(SampleMinibatch, HistogramMatchesUniformDomainAllocation) {
  // Frequency-count oracle: over 1000 batches of M=10 from K=3 domains each domain
  // receives exactly its quota every time, and within a domain each sample is drawn
  // equally often (1000 * quota / n_d, up to one partial pass).
  const auto ds = generate_synthetic(small_config());
  SamplerState state(ds, 5);
  const auto quota = domain_quotas(10, 3);
  std::map<int, long> domain_counts;
  std::map<std::string, long> sample_counts;
  for (int b = 0; b < 1000; ++b) {
    const auto batch = sample_minibatch(ds, 10, state);
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
      ++domain_counts[batch.domains[static_cast<std::size_t>(i)]];
      std::ostringstream key;
      key << batch.domains[static_cast<std::size_t>(i)] << ':' << batch.features.row(i);
      ++sample_counts[key.str()];
    }
  }
  for (int d = 0; d < 3; ++d) EXPECT_EQ(domain_counts[d], 1000 * static_cast<long>(quota[static_cast<std::size_t>(d)]));
  for (const auto &[key, count] : sample_counts) {
    const int d = key[0] - '0';
    const double expected = 1000.0 * quota[static_cast<std::size_t>(d)] / 60.0;
    EXPECT_LE(std::abs(count - expected), 1.0) << key;
  }
}

TEST(SampleMinibatch, EveryBatchCoversEverySourceDomain) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthConfig c = small_config();
    c.num_domains = 5;
    c.seed = seed;
    const auto ds = generate_synthetic(c);
    SamplerState state(ds, seed);
    for (std::size_t m = 5; m < 40; m += 3) {
      const auto b = sample_minibatch(ds, m, state);
      EXPECT_EQ(std::set<int>(b.domains.begin(), b.domains.end()).size(), 5u);
    }
  }
}

TEST(SampleMinibatch, SameSeedSameBatchSequence) {
  const auto ds = generate_synthetic(small_config());
  SamplerState a(ds, 9), b(ds, 9);
  for (int i = 0; i < 20; ++i) {
    const auto x = sample_minibatch(ds, 12, a);
    const auto y = sample_minibatch(ds, 12, b);
    EXPECT_EQ(x.features, y.features);
    EXPECT_EQ(x.labels, y.labels);
  }
}

TEST(AugmentJitter, ZeroStrengthIsIdentity) {
  const auto ds = generate_synthetic(small_config());
  const auto batch = Minibatch::from_dataset(ds);
  Rng rng(1);
  const auto out = augment_jitter(batch, 0.0, rng);
  EXPECT_EQ(out.features, batch.features);
  EXPECT_EQ(out.labels, batch.labels);
  EXPECT_EQ(out.domains, batch.domains);
}

TEST(AugmentJitter, PreservesLabelsAndMatchesNoiseMoments) {
  Minibatch batch;
  batch.features = Matrix::Zero(100000, 2);
  batch.labels.assign(100000, 1);
  batch.domains.assign(100000, 2);
  Rng rng(4);
  const double strength = 0.3;
  const auto out = augment_jitter(batch, strength, rng);
  EXPECT_EQ(out.labels, batch.labels);
  EXPECT_EQ(out.domains, batch.domains);
  for (Eigen::Index j = 0; j < 2; ++j) {
    const auto col = out.features.col(j).array();
    const double mean = col.mean();
    const double sd = std::sqrt((col - mean).square().sum() / (col.size() - 1));
    EXPECT_NEAR(sd, strength, 0.02 * strength);
    EXPECT_NEAR(mean, 0.0, 5.0 * strength / std::sqrt(100000.0));
  }
}
