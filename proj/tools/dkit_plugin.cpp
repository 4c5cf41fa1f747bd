// Reference denoiser plugin speaking the DNP1 protocol on stdin/stdout.
//
//   dkit-plugin echo
//   dkit-plugin gaussian --data PATH [--format csv|raw-f64|pgm-dir]
//   dkit-plugin multi-delta --data PATH [--format ...]

#include <unistd.h>

#include <iostream>

#include <CLI11.hpp>

#include "dkit/dataset.hpp"
#include "dkit/denoiser.hpp"
#include "dkit/plugin.hpp"

using namespace dkit;

int main(int argc, char** argv) {
  CLI::App app{"Reference denoiser plugin"};
  app.require_subcommand(1);
  std::string data, format = "csv";
  auto* echo = app.add_subcommand("echo", "Return the input unchanged");
  auto* gauss = app.add_subcommand("gaussian", "Gaussian (Wiener) denoiser of a dataset");
  auto* delta = app.add_subcommand("multi-delta", "Optimal denoiser of a finite point set");
  for (auto* c : {gauss, delta}) {
    c->add_option("--data", data, "Dataset path")->required();
    c->add_option("--format", format, "csv, raw-f64 or pgm-dir");
  }
  CLI11_PARSE(app, argc, argv);

  try {
    if (echo->parsed())
      return serve_plugin(STDIN_FILENO, STDOUT_FILENO, 0, [](const Matrix& b, double) { return b; });
    const DataMatrix X = load_dataset(data, parse_data_format(format));
    DenoiserPtr D;
    if (gauss->parsed()) D = std::make_shared<GaussianDenoiser>(empirical_stats(X));
    else D = std::make_shared<MultiDeltaDenoiser>(X);
    return serve_plugin(STDIN_FILENO, STDOUT_FILENO, X.dim(),
                        [&](const Matrix& b, double sigma) { return D->evaluate_batch(b, sigma); });
  } catch (const std::exception& e) {
    std::cerr << "dkit-plugin: " << e.what() << '\n';
    return 1;
  }
}
