#pragma once

#include "cropcube/cube.hpp"
#include "cropcube/predictors.hpp"

#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cropcube {

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws ProtocolError on characters outside the standard alphabet or bad padding.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Where an external model lives. `target` is either a shell command whose
/// process speaks the protocol on stdin/stdout, or "unix:<path>" for a
/// listening local socket.
struct ExternalEndpoint {
  std::string target;
  std::chrono::milliseconds timeout{30000};
};

/// One reply: either a scalar prediction or an [H, W] map.
struct ExternalReply {
  std::optional<double> prediction;
  std::optional<Imagef> map;
};

/// Request line sent for one cube:
///   {"task", "dims": [T,C,H,W], "band_names", "timestep_mask", "payload"}
/// where payload is base64 of the f32 little-endian cube data.
std::string encode_external_request(Task task, const DataCube& cube);

/// Parses {"prediction": x} or {"map": base64 f32, "dims": [H, W]}.
/// Throws ProtocolError.
ExternalReply decode_external_reply(std::string_view line);

/// A persistent connection to one endpoint. Requests are serialised by an
/// internal mutex, so one instance may be shared between threads. A child
/// process is started lazily and restarted after a timeout or crash.
class ExternalPredictor {
 public:
  explicit ExternalPredictor(ExternalEndpoint endpoint);
  ~ExternalPredictor();
  ExternalPredictor(const ExternalPredictor&) = delete;
  ExternalPredictor& operator=(const ExternalPredictor&) = delete;

  /// Throws ExternalTimeout, ProtocolError.
  ExternalReply request(Task task, const DataCube& cube);

  const ExternalEndpoint& endpoint() const { return endpoint_; }

 private:
  void connect();
  void disconnect();
  void send_line(const std::string& line, std::chrono::steady_clock::time_point deadline);
  std::string read_line(std::chrono::steady_clock::time_point deadline);

  ExternalEndpoint endpoint_;
  std::mutex mutex_;
  int write_fd_ = -1;
  int read_fd_ = -1;
  int child_pid_ = -1;
  std::string buffer_;
};

/// One-shot convenience wrapper around ExternalPredictor.
ExternalReply external_predict(Task task, const DataCube& cube, const ExternalEndpoint& endpoint);

}  // namespace cropcube
