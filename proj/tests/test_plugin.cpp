#include <gtest/gtest.h>

#include <filesystem>

#include "dkit/plugin.hpp"
#include "fixtures.hpp"

using namespace dkit;
using namespace std::chrono_literals;

namespace {

PluginProcess helper(const std::string& mode, Eigen::Index dim, std::chrono::milliseconds timeout = 5s) {
  return PluginProcess({DKIT_TEST_PLUGIN, mode}, dim, timeout);
}

PluginFailure failure_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const PluginError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a PluginError";
  return PluginFailure::protocol;
}

Matrix random_batch(Eigen::Index k, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(k, d);
  fill_normal(rng, 1.0, m);
  return m;
}

}  // namespace

TEST(Plugin, EchoIsBitwiseLoopback) {
  auto p = helper("echo", 5);
  Matrix b = random_batch(7, 5, 1);
  b(0, 0) = -0.0;
  b(1, 1) = 1e-308;
  Matrix out = external_denoise(p, b, 0.3);
  ASSERT_EQ(out.rows(), 7);
  EXPECT_EQ(std::memcmp(out.data(), b.data(), sizeof(double) * b.size()), 0);
  // several round trips on the same process
  for (int i = 0; i < 3; ++i) EXPECT_EQ(external_denoise(p, b.topRows(2), 1.0), b.topRows(2));
}

TEST(Plugin, ReferenceEchoAndShutdown) {
  auto p = PluginProcess::from_command_line(std::string(DKIT_REFERENCE_PLUGIN) + " echo", 3);
  Matrix b = random_batch(4, 3, 2);
  EXPECT_EQ(external_denoise(p, b, 2.0), b);
  p.shutdown();
  EXPECT_FALSE(p.alive());
  EXPECT_THROW(external_denoise(p, b, 2.0), PluginError);
}

TEST(Plugin, ReferenceGaussianMatchesInProcess) {
  auto X = fixtures::gaussian_data(6, 80, 3);
  auto dir = std::filesystem::temp_directory_path() / ("dkit_plugin_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  csv.precision(17);
  for (Eigen::Index i = 0; i < X.n_samples(); ++i)
    for (Eigen::Index j = 0; j < X.dim(); ++j) csv << X.values()(i, j) << (j + 1 < X.dim() ? ',' : '\n');
  binio::write_text(dir / "x.csv", csv.str());

  auto proc = std::make_shared<PluginProcess>(
      std::vector<std::string>{DKIT_REFERENCE_PLUGIN, "gaussian", "--data", (dir / "x.csv").string()}, 6);
  ExternalDenoiser ext(proc);
  EXPECT_FALSE(ext.concurrent_safe());
  auto stats = empirical_stats(X);
  Matrix b = random_batch(10, 6, 4);
  for (double sigma : {0.05, 0.5, 5.0}) {
    Matrix got = ext.evaluate_batch(b, sigma);
    for (Eigen::Index i = 0; i < b.rows(); ++i)
      EXPECT_LT((got.row(i).transpose() - gaussian_denoise(stats, b.row(i).transpose(), sigma)).norm(), 1e-9);
  }
  Vector one = ext.evaluate(b.row(0).transpose(), 1.0);
  EXPECT_LT((one - gaussian_denoise(stats, b.row(0).transpose(), 1.0)).norm(), 1e-9);
  std::filesystem::remove_all(dir);
}

TEST(Plugin, WrongDimensionAtHandshake) {
  EXPECT_EQ(failure_of([] { helper("wrong-dim", 4); }), PluginFailure::dimension_mismatch);
}

TEST(Plugin, BadMagicIsProtocolError) {
  EXPECT_EQ(failure_of([] { helper("bad-magic", 4); }), PluginFailure::protocol);
}

TEST(Plugin, BadResponseTag) {
  auto p = helper("bad-tag", 2);
  EXPECT_EQ(failure_of([&] { external_denoise(p, random_batch(1, 2, 5), 1.0); }), PluginFailure::protocol);
  EXPECT_FALSE(p.alive());
}

TEST(Plugin, ResponseShapeMismatch) {
  auto p = helper("wrong-k", 3);
  EXPECT_EQ(failure_of([&] { external_denoise(p, random_batch(2, 3, 6), 1.0); }), PluginFailure::dimension_mismatch);
  auto q = helper("extra", 3);
  EXPECT_EQ(failure_of([&] { external_denoise(q, random_batch(2, 3, 7), 1.0); }), PluginFailure::dimension_mismatch);
}

TEST(Plugin, ProcessExit) {
  auto p = helper("exit-early", 2);
  try {
    external_denoise(p, random_batch(1, 2, 8), 1.0);
    FAIL() << "expected a PluginError";
  } catch (const PluginError& e) {
    EXPECT_EQ(e.kind(), PluginFailure::process_exit);
    EXPECT_NE(std::string(e.what()).find("exit status 3"), std::string::npos) << e.what();
  }
  EXPECT_EQ(failure_of([] { PluginProcess({"/nonexistent/dkit-plugin"}, 2, 2s); }), PluginFailure::process_exit);
}

TEST(Plugin, Timeout) {
  auto p = helper("hang", 2, 300ms);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(failure_of([&] { external_denoise(p, random_batch(1, 2, 9), 1.0); }), PluginFailure::timeout);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

TEST(Plugin, InputValidation) {
  auto p = helper("echo", 2);
  EXPECT_THROW(external_denoise(p, random_batch(1, 3, 1), 1.0), InvalidArgument);
  EXPECT_THROW(external_denoise(p, random_batch(1, 2, 1), 0.0), InvalidArgument);
  EXPECT_EQ(detail::split_command("a 'b c' \"d e\"  f"), (std::vector<std::string>{"a", "b c", "d e", "f"}));
  EXPECT_THROW(detail::split_command("a 'b"), InvalidArgument);
}
