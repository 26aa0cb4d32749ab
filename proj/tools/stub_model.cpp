// Minimal external model speaking the line protocol, for tests and demos.
//
//   cropcube-stub-model --prediction 7     reply {"prediction": 7} to every request
//   cropcube-stub-model --map 0.6          reply an H x W map filled with 0.6
//   cropcube-stub-model --malformed        reply a line that is not JSON
//   cropcube-stub-model --sleep-ms 5000    wait before each reply

#include "cropcube/external.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <bit>
#include <chrono>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

int main(int argc, char** argv) {
  CLI::App app{"External model stub"};
  std::optional<double> prediction;
  std::optional<float> map_value;
  bool malformed = false;
  int sleep_ms = 0;
  app.add_option("--prediction", prediction);
  app.add_option("--map", map_value);
  app.add_flag("--malformed", malformed);
  app.add_option("--sleep-ms", sleep_ms);
  CLI11_PARSE(app, argc, argv);

  std::string line;
  while (std::getline(std::cin, line)) {
    if (sleep_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
    if (malformed) {
      std::cout << "this is not json" << std::endl;
      continue;
    }
    const auto request = nlohmann::json::parse(line, nullptr, false);
    if (request.is_discarded()) {
      std::cout << R"({"error": "bad request"})" << std::endl;
      continue;
    }
    if (map_value) {
      const auto dims = request.at("dims");
      const std::size_t h = dims.at(2).get<std::size_t>(), w = dims.at(3).get<std::size_t>();
      std::vector<std::uint8_t> bytes(h * w * 4);
      const auto bits = std::bit_cast<std::uint32_t>(*map_value);
      for (std::size_t i = 0; i < h * w; ++i)
        for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
      const nlohmann::json reply = {{"map", cropcube::base64_encode(bytes)}, {"dims", {h, w}}};
      std::cout << reply.dump() << std::endl;
    } else {
      const nlohmann::json reply = {{"prediction", prediction.value_or(0.0)}};
      std::cout << reply.dump() << std::endl;
    }
  }
  return 0;
}
