// Test double for the PnP denoiser protocol.
//   denoiser_stub echo|smooth|wrong-size|malformed|nan|hang|exit
#include "cmirror/denoiser.hpp"
#include "cmirror/io.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <string>
#include <thread>

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  const std::string mode = argc > 1 ? argv[1] : "echo";
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.rfind("DENOISE sigma=", 0) != 0) {
      std::cerr << "denoiser_stub: bad request line: " << line << "\n";
      return 2;
    }
    if (mode == "exit") return 3;
    const double sigma = std::strtod(line.c_str() + std::strlen("DENOISE sigma="), nullptr);
    cmirror::Image x;
    try {
      x = cmirror::read_pfm(std::cin, "stdin");
    } catch (const std::exception& e) {
      std::cerr << "denoiser_stub: " << e.what() << "\n";
      return 2;
    }
    if (mode == "hang") {
      for (;;) std::this_thread::sleep_for(std::chrono::seconds(60));
    } else if (mode == "malformed") {
      std::cout << "this is not a frame\n";
    } else if (mode == "wrong-size") {
      cmirror::write_pfm(cmirror::Image::Zero(x.rows() + 1, x.cols() + 1), std::cout);
    } else if (mode == "nan") {
      std::cout << "Pf\n" << x.cols() << " " << x.rows() << "\n-1.0\n";
      const float v = std::numeric_limits<float>::quiet_NaN();
      for (Eigen::Index i = 0; i < x.size(); ++i) std::cout.write(reinterpret_cast<const char*>(&v), 4);
    } else if (mode == "smooth") {
      cmirror::write_pfm(cmirror::SmoothingDenoiser().denoise(x, sigma), std::cout);
    } else {
      cmirror::write_pfm(x, std::cout);
    }
    std::cout.flush();
  }
  return 0;
}
