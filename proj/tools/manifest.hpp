#pragma once

// Run manifests: resolved configuration plus git-style blob hashes of every
// input and output file.

#include <openssl/evp.h>

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmi/io.hpp"

namespace cmi::tools {

/// SHA-1 of "blob <size>\0<content>", as `git hash-object` computes it.
inline std::string git_blob_hash(const std::string& content) {
    const std::string header = "blob " + std::to_string(content.size()) + '\0';
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, content.data(), content.size());
    EVP_DigestFinal_ex(ctx, md.data(), &len);
    EVP_MD_CTX_free(ctx);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

class Manifest {
public:
    explicit Manifest(std::string command) { doc_["command"] = std::move(command); }

    void set(const std::string& key, nlohmann::ordered_json value) { doc_[key] = std::move(value); }

    void add_input(const std::string& path) { doc_["inputs"].push_back(entry(path, path)); }
    /// Outputs are recorded relative to the run directory.
    void add_output(const std::string& path) {
        doc_["outputs"].push_back(entry(path, std::filesystem::path(path).filename().string()));
    }

    void write(const std::string& path) const { io::write_file(path, doc_.dump(2) + '\n'); }

private:
    nlohmann::ordered_json doc_{{"tool", "cmi"}, {"format_version", 1}};

    static nlohmann::ordered_json entry(const std::string& path, const std::string& shown) {
        return {{"path", shown}, {"git_blob_sha1", git_blob_hash(io::read_file(path))}};
    }
};

}  // namespace cmi::tools
