#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

namespace puflock {

using Digest = std::array<std::uint8_t, 32>;

namespace detail {

struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* c) const noexcept { EVP_MD_CTX_free(c); }
};

inline std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> digest_init(const EVP_MD* md) {
  std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestInit_ex(ctx.get(), md, nullptr) != 1) throw std::runtime_error("EVP_DigestInit_ex failed");
  return ctx;
}

}  // namespace detail

/// SHA-256 over the concatenation of `parts`.
inline Digest sha256(std::initializer_list<std::span<const std::uint8_t>> parts) {
  auto ctx = detail::digest_init(EVP_sha256());
  for (auto p : parts)
    if (EVP_DigestUpdate(ctx.get(), p.data(), p.size()) != 1) throw std::runtime_error("EVP_DigestUpdate failed");
  Digest out{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1 || len != out.size())
    throw std::runtime_error("EVP_DigestFinal_ex failed");
  return out;
}

/// SHAKE256 extendable output: `out_len` bytes squeezed from the concatenation of `parts`.
inline std::vector<std::uint8_t> shake256(std::initializer_list<std::span<const std::uint8_t>> parts,
                                          std::size_t out_len) {
  auto ctx = detail::digest_init(EVP_shake256());
  for (auto p : parts)
    if (EVP_DigestUpdate(ctx.get(), p.data(), p.size()) != 1) throw std::runtime_error("EVP_DigestUpdate failed");
  std::vector<std::uint8_t> out(out_len);
  if (EVP_DigestFinalXOF(ctx.get(), out.data(), out.size()) != 1) throw std::runtime_error("EVP_DigestFinalXOF failed");
  return out;
}

}  // namespace puflock
