#pragma once

// Manifest-driven artifact fetching: a checksum-keyed cache with atomic
// writes, bounded retries with exponential backoff, and HTTP byte-range
// reads for partial access to remote rasters. The manifest is structured
// text, one record per line: url, byte length, sha256 hex, target filename.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"

#include "embedheight/digest.hpp"
#include "embedheight/errors.hpp"
#include "embedheight/grid.hpp"

namespace embedheight {

struct FetchEntry {
    std::string url;
    std::uint64_t length = 0;
    std::string sha256;  // 64 lowercase hex chars
    std::string filename;
};

struct FetchManifest {
    std::vector<FetchEntry> entries;
    std::filesystem::path cache_dir;
};

struct FetchOptions {
    int max_retries = 3;  // additional attempts after the first failure
    int workers = 4;      // accepted for interface compatibility; this build
                          // downloads sequentially in manifest order
    std::function<void(std::chrono::seconds)> sleeper = [](std::chrono::seconds s) {
        std::this_thread::sleep_for(s);
    };
};

inline FetchManifest parse_manifest(const std::string& text, std::filesystem::path cache_dir) {
    FetchManifest m;
    m.cache_dir = std::move(cache_dir);
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const std::size_t h = line.find('#'); h != std::string::npos) line.resize(h);
        std::istringstream row(line);
        FetchEntry e;
        if (!(row >> e.url)) continue;  // blank or comment-only line
        std::string extra;
        if (!(row >> e.length >> e.sha256 >> e.filename) || (row >> extra))
            throw FormatError("manifest line " + std::to_string(line_no) +
                              ": expected 'url length sha256 filename'");
        if (e.length == 0)
            throw FormatError("manifest line " + std::to_string(line_no) +
                              ": length must be > 0");
        if (e.sha256.size() != 64 ||
            e.sha256.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
            throw FormatError("manifest line " + std::to_string(line_no) +
                              ": checksum must be 64 hex chars");
        for (char& c : e.sha256) c = static_cast<char>(std::tolower(c));
        if (e.filename.empty() || e.filename.find('/') != std::string::npos ||
            e.filename.find('\\') != std::string::npos || e.filename == "." ||
            e.filename == "..")
            throw FormatError("manifest line " + std::to_string(line_no) +
                              ": filename must be a plain name");
        m.entries.push_back(std::move(e));
    }
    return m;
}

namespace detail {

struct UrlParts {
    std::string host;  // scheme://host[:port]
    std::string path;
};

inline UrlParts split_url(const std::string& url) {
    const std::string scheme = "http://";
    if (url.rfind(scheme, 0) != 0)
        throw ValueError("fetch: only http:// urls are supported, got " + url);
    const std::size_t slash = url.find('/', scheme.size());
    UrlParts p;
    p.host = slash == std::string::npos ? url : url.substr(0, slash);
    p.path = slash == std::string::npos ? "/" : url.substr(slash);
    return p;
}

inline std::string http_get(const std::string& url, const httplib::Headers& headers,
                            int& status_out) {
    const UrlParts parts = split_url(url);
    httplib::Client client(parts.host);
    client.set_connection_timeout(10, 0);
    client.set_read_timeout(60, 0);
    const httplib::Result res = client.Get(parts.path, headers);
    if (!res) throw IoError("fetch: " + url + ": " + httplib::to_string(res.error()));
    status_out = res->status;
    return res->body;
}

inline void write_atomically(const std::filesystem::path& path, std::string_view bytes) {
    const std::filesystem::path tmp = path.string() + ".part";
    write_file_bytes(tmp, bytes);
    std::filesystem::rename(tmp, path);
}

inline bool cache_entry_valid(const std::filesystem::path& path, const FetchEntry& e) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) return false;
    if (std::filesystem::file_size(path, ec) != e.length || ec) return false;
    return sha256_hex(read_file_bytes(path)) == e.sha256;
}

}  // namespace detail

/// The directory actually used: EMBEDHEIGHT_CACHE overrides the manifest's.
inline std::filesystem::path resolve_cache_dir(const FetchManifest& m) {
    if (const char* env = std::getenv("EMBEDHEIGHT_CACHE"); env && *env)
        return std::filesystem::path(env);
    if (m.cache_dir.empty()) throw ValueError("fetch: no cache directory configured");
    return m.cache_dir;
}

/// Ensure every manifest entry is present and checksum-valid in the cache,
/// downloading what is missing. Returns the cached paths in manifest order.
/// Entries sharing a checksum are fetched once (the cache is keyed by
/// content, so mirrors dedupe).
inline std::vector<std::filesystem::path> fetch(const FetchManifest& manifest,
                                                const FetchOptions& options = {}) {
    if (options.max_retries < 0) throw ValueError("fetch: retries must be >= 0");
    if (options.workers < 1) throw ValueError("fetch: workers must be >= 1");
    const std::filesystem::path dir = resolve_cache_dir(manifest);
    std::filesystem::create_directories(dir);

    std::map<std::string, std::filesystem::path> by_checksum;
    std::vector<std::filesystem::path> out;
    for (const FetchEntry& e : manifest.entries) {
        const std::filesystem::path path = dir / e.filename;
        if (detail::cache_entry_valid(path, e)) {
            by_checksum.emplace(e.sha256, path);
            out.push_back(path);
            continue;
        }
        if (const auto hit = by_checksum.find(e.sha256); hit != by_checksum.end()) {
            detail::write_atomically(path, read_file_bytes(hit->second));
            out.push_back(path);
            continue;
        }
        std::string last_error;
        bool done = false;
        for (int attempt = 0; attempt <= options.max_retries && !done; ++attempt) {
            if (attempt > 0) options.sleeper(std::chrono::seconds(1 << (attempt - 1)));
            try {
                int status = 0;
                const std::string body = detail::http_get(e.url, {}, status);
                if (status != 200)
                    throw IoError("fetch: " + e.url + ": HTTP " + std::to_string(status));
                if (body.size() != e.length)
                    throw IoError("fetch: " + e.url + ": expected " + std::to_string(e.length) +
                                  " bytes, got " + std::to_string(body.size()));
                if (sha256_hex(body) != e.sha256)
                    throw IoError("fetch: " + e.url + ": checksum mismatch");
                detail::write_atomically(path, body);
                done = true;
            } catch (const IoError& err) {
                last_error = err.what();
            }
        }
        if (!done)
            throw IoError(last_error + " (after " + std::to_string(options.max_retries) +
                          " retries)");
        by_checksum.emplace(e.sha256, path);
        out.push_back(path);
    }
    return out;
}

/// Read exactly `length` bytes starting at `offset` via an HTTP range
/// request; lets callers pull TIFF headers and tiles without a full
/// download. Servers that ignore the Range header are reported as such.
inline std::string read_range(const std::string& url, std::uint64_t offset,
                              std::uint64_t length) {
    if (length < 1) throw ValueError("read_range: length must be >= 1");
    const std::string range =
        "bytes=" + std::to_string(offset) + "-" + std::to_string(offset + length - 1);
    int status = 0;
    const std::string body = detail::http_get(url, {{"Range", range}}, status);
    if (status == 200)
        throw IoError("read_range: " + url + ": server ignored the Range header");
    if (status == 416)
        throw IoError("read_range: " + url + ": requested range not satisfiable");
    if (status != 206) throw IoError("read_range: " + url + ": HTTP " + std::to_string(status));
    if (body.size() != length)
        throw IoError("read_range: " + url + ": short read (" + std::to_string(body.size()) +
                      " of " + std::to_string(length) + " bytes)");
    return body;
}

}  // namespace embedheight
