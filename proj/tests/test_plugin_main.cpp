// Plugin with scripted misbehavior for protocol tests. argv[1] selects it:
//   echo        well-behaved loopback
//   wrong-dim   answers the handshake with dim + 1
//   bad-magic   answers the handshake with the wrong magic
//   bad-tag     answers requests with tag 0x07
//   wrong-k     answers with k + 1 rows
//   extra       appends one value per row to every response
//   exit-early  exits with status 3 after the handshake
//   hang        never answers requests

#include <unistd.h>

#include <cstring>
#include <string>
#include <vector>

#include "dkit/binio.hpp"

namespace {

bool read_exact(unsigned char* p, std::size_t n) {
  std::size_t done = 0;
  while (done < n) {
    ssize_t r = ::read(STDIN_FILENO, p + done, n - done);
    if (r <= 0) return false;
    done += static_cast<std::size_t>(r);
  }
  return true;
}

void write_all(const std::vector<unsigned char>& buf) {
  std::size_t done = 0;
  while (done < buf.size()) {
    ssize_t r = ::write(STDOUT_FILENO, buf.data() + done, buf.size() - done);
    if (r <= 0) return;
    done += static_cast<std::size_t>(r);
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "echo";
  unsigned char hello[8];
  if (!read_exact(hello, 8)) return 2;
  const std::uint32_t dim = dkit::binio::get_u32(hello + 4);
  std::vector<unsigned char> reply;
  dkit::binio::put_bytes(reply, mode == "bad-magic" ? "XXXX" : "DNP1");
  dkit::binio::put_u32(reply, mode == "wrong-dim" ? dim + 1 : dim);
  write_all(reply);
  if (mode == "exit-early") return 3;
  while (true) {
    unsigned char tag;
    if (!read_exact(&tag, 1)) return 2;
    if (tag == 0xFF) return 0;
    unsigned char head[12];
    if (!read_exact(head, 12)) return 2;
    const std::uint32_t k = dkit::binio::get_u32(head);
    std::vector<unsigned char> payload(8ull * k * dim);
    if (!read_exact(payload.data(), payload.size())) return 2;
    if (mode == "hang") {
      ::pause();
      continue;
    }
    std::vector<unsigned char> resp;
    resp.push_back(mode == "bad-tag" ? 0x07 : 0x02);
    dkit::binio::put_u32(resp, mode == "wrong-k" ? k + 1 : k);
    for (std::uint32_t i = 0; i < k; ++i) {
      resp.insert(resp.end(), payload.begin() + 8ull * i * dim, payload.begin() + 8ull * (i + 1) * dim);
      if (mode == "extra") dkit::binio::put_f64(resp, 0.0);
    }
    write_all(resp);
  }
}
