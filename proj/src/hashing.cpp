#include "hiervl/hashing.hpp"

#include <openssl/sha.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "hiervl/errors.hpp"

namespace hiervl {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string git_blob_hash(std::string_view bytes) {
  std::string payload = "blob " + std::to_string(bytes.size());
  payload.push_back('\0');
  payload.append(bytes);
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(payload.data()), payload.size(), digest);
  std::string hex;
  char buf[3];
  for (unsigned char b : digest) {
    std::snprintf(buf, sizeof buf, "%02x", b);
    hex += buf;
  }
  return hex;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace hiervl
