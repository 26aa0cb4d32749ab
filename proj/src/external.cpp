#include "cropcube/external.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

namespace cropcube {

using nlohmann::json;

namespace {

constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int sextet(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::vector<std::uint8_t> floats_le(const float* data, std::size_t n) {
  std::vector<std::uint8_t> out(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(data[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (std::uint32_t{bytes[i]} << 16) | (std::uint32_t{bytes[i + 1]} << 8) | bytes[i + 2];
    for (int s = 18; s >= 0; s -= 6) out.push_back(kAlphabet[(v >> s) & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = std::uint32_t{bytes[i]} << 16;
    if (rest == 2) v |= std::uint32_t{bytes[i + 1]} << 8;
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) fail(ErrorCode::ProtocolError, "base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const bool last = i + 4 == text.size();
    int pad = 0;
    std::uint32_t v = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char c = text[i + k];
      int s;
      if (c == '=' && last && k >= 2) {
        s = 0;
        ++pad;
      } else {
        s = pad ? -1 : sextet(c);
      }
      if (s < 0) fail(ErrorCode::ProtocolError, "invalid base64 data");
      v = (v << 6) | static_cast<std::uint32_t>(s);
    }
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>(v >> 8));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

std::string encode_external_request(Task task, const DataCube& cube) {
  const auto& d = cube.data.dims();
  json j = {{"task", std::string(to_string(task))},
            {"dims", {d[0], d[1], d[2], d[3]}},
            {"band_names", cube.band_names},
            {"timestep_mask", cube.timestep_mask},
            {"payload", base64_encode(floats_le(cube.data.data(), static_cast<std::size_t>(cube.data.size())))}};
  return j.dump();
}

ExternalReply decode_external_reply(std::string_view line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) fail(ErrorCode::ProtocolError, "reply is not a JSON object");
  ExternalReply reply;
  if (auto it = j.find("prediction"); it != j.end()) {
    if (!it->is_number()) fail(ErrorCode::ProtocolError, "\"prediction\" must be a number");
    reply.prediction = it->get<double>();
    return reply;
  }
  if (auto it = j.find("map"); it != j.end()) {
    const auto dims = j.find("dims");
    if (!it->is_string() || dims == j.end() || !dims->is_array() || dims->size() != 2 || !(*dims)[0].is_number_unsigned() ||
        !(*dims)[1].is_number_unsigned())
      fail(ErrorCode::ProtocolError, "map reply needs a base64 string and \"dims\": [H, W]");
    const Index h = (*dims)[0].get<Index>(), w = (*dims)[1].get<Index>();
    const auto bytes = base64_decode(it->get<std::string>());
    if (static_cast<Index>(bytes.size()) != h * w * 4)
      fail(ErrorCode::ProtocolError, "map payload does not hold H * W float32 values");
    Imagef map(h, w);
    for (Index i = 0; i < h * w; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t{bytes[static_cast<std::size_t>(i * 4 + b)]} << (8 * b);
      map.data()[i] = std::bit_cast<float>(bits);
    }
    reply.map = std::move(map);
    return reply;
  }
  if (auto it = j.find("error"); it != j.end()) fail(ErrorCode::ProtocolError, "external model error: " + it->dump());
  fail(ErrorCode::ProtocolError, "reply has neither \"prediction\" nor \"map\"");
}

// ---------------------------------------------------------------------------

ExternalPredictor::ExternalPredictor(ExternalEndpoint endpoint) : endpoint_(std::move(endpoint)) {
  if (endpoint_.target.empty()) fail(ErrorCode::InvalidConfig, "external endpoint is empty");
}

ExternalPredictor::~ExternalPredictor() { disconnect(); }

void ExternalPredictor::connect() {
  // A child that exits early must surface as a protocol error, not a signal.
  ::signal(SIGPIPE, SIG_IGN);
  buffer_.clear();
  if (endpoint_.target.starts_with("unix:")) {
    const std::string path = endpoint_.target.substr(5);
    sockaddr_un addr{};
    if (path.size() >= sizeof(addr.sun_path)) fail(ErrorCode::InvalidConfig, "socket path too long: " + path);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) fail(ErrorCode::IoError, std::string("socket: ") + std::strerror(errno));
    addr.sun_family = AF_UNIX;
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) {
      const int err = errno;
      ::close(fd);
      fail(ErrorCode::ProtocolError, "cannot connect to " + path + ": " + std::strerror(err));
    }
    write_fd_ = read_fd_ = fd;
    return;
  }

  int to_child[2], from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) fail(ErrorCode::IoError, std::string("pipe: ") + std::strerror(errno));
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    fail(ErrorCode::IoError, std::string("pipe: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) fail(ErrorCode::IoError, std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::signal(SIGPIPE, SIG_DFL);
    ::execl("/bin/sh", "sh", "-c", endpoint_.target.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  write_fd_ = to_child[1];
  read_fd_ = from_child[0];
  child_pid_ = pid;
}

void ExternalPredictor::disconnect() {
  if (write_fd_ >= 0) ::close(write_fd_);
  if (read_fd_ >= 0 && read_fd_ != write_fd_) ::close(read_fd_);
  write_fd_ = read_fd_ = -1;
  if (child_pid_ > 0) {
    ::kill(child_pid_, SIGKILL);
    ::waitpid(child_pid_, nullptr, 0);
    child_pid_ = -1;
  }
  buffer_.clear();
}

namespace {

int remaining_ms(std::chrono::steady_clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
  return static_cast<int>(std::max<std::int64_t>(0, left.count()));
}

}  // namespace

void ExternalPredictor::send_line(const std::string& line, std::chrono::steady_clock::time_point deadline) {
  std::size_t sent = 0;
  while (sent < line.size()) {
    pollfd p{write_fd_, POLLOUT, 0};
    const int ready = ::poll(&p, 1, remaining_ms(deadline));
    if (ready < 0 && errno == EINTR) continue;
    if (ready == 0) fail(ErrorCode::ExternalTimeout, "external model did not accept the request in time");
    const ssize_t n = ::write(write_fd_, line.data() + sent, line.size() - sent);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      fail(ErrorCode::ProtocolError, std::string("external model closed its input: ") + std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::string ExternalPredictor::read_line(std::chrono::steady_clock::time_point deadline) {
  std::array<char, 65536> chunk{};
  for (;;) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return line;
    }
    pollfd p{read_fd_, POLLIN, 0};
    const int ready = ::poll(&p, 1, remaining_ms(deadline));
    if (ready < 0 && errno == EINTR) continue;
    if (ready == 0) fail(ErrorCode::ExternalTimeout, "external model did not reply within " +
                                                         std::to_string(endpoint_.timeout.count()) + " ms");
    const ssize_t n = ::read(read_fd_, chunk.data(), chunk.size());
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) fail(ErrorCode::ProtocolError, "external model closed the stream before replying");
    buffer_.append(chunk.data(), static_cast<std::size_t>(n));
  }
}

ExternalReply ExternalPredictor::request(Task task, const DataCube& cube) {
  const std::string line = encode_external_request(task, cube) + "\n";
  std::lock_guard lock(mutex_);
  const auto deadline = std::chrono::steady_clock::now() + endpoint_.timeout;
  try {
    if (write_fd_ < 0) connect();
    send_line(line, deadline);
    return decode_external_reply(read_line(deadline));
  } catch (const Error& e) {
    // Stream state is unknown after any failure; start fresh next time.
    if (e.code() == ErrorCode::ExternalTimeout || e.code() == ErrorCode::ProtocolError) disconnect();
    throw;
  }
}

ExternalReply external_predict(Task task, const DataCube& cube, const ExternalEndpoint& endpoint) {
  ExternalPredictor predictor(endpoint);
  return predictor.request(task, cube);
}

}  // namespace cropcube
