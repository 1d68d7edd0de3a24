#pragma once

// Downloads the motor movement/imagery EDF files over HTTP(S). A file on disk
// counts as complete when its size equals the size its own EDF header
// declares, so reruns skip finished files and re-download truncated ones.
// Requires linking with httplib's OpenSSL support for https URLs.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <regex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fastbci/edf.hpp"
#include "httplib.h"

namespace fastbci {

class FetchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FetchOptions {
    std::string base_url = "https://physionet.org/files/eegmmidb/1.0.0";
    int first_run = 1;
    int last_run = 14;
    int attempts = 3;
    std::chrono::milliseconds retry_delay{500};
    std::function<void(const std::string&)> log;
};

struct FetchReport {
    std::size_t downloaded = 0;
    std::size_t skipped = 0;   // already complete
    std::size_t repaired = 0;  // present but incomplete, downloaded again
    std::vector<std::string> failed;
};

inline std::string edf_file_name(int subject, int run) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "S%03dR%02d.edf", subject, run);
    return buf;
}

/// Relative location of one recording: S001/S001R03.edf.
inline std::filesystem::path edf_relative_path(int subject, int run) {
    char dir[8];
    std::snprintf(dir, sizeof dir, "S%03d", subject);
    return std::filesystem::path(dir) / edf_file_name(subject, run);
}

inline bool edf_file_complete(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        return false;
    }
    try {
        read_edf_header(path);
        return true;
    } catch (const EdfError&) {
        return false;
    }
}

namespace fetch_detail {

struct Url {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path without trailing slash
};

inline Url split_url(const std::string& url) {
    static const std::regex pattern(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_match(url, m, pattern)) {
        throw std::invalid_argument("unsupported base URL '" + url + "' (expected http:// or https://)");
    }
    Url u{m[1].str(), m[2].str()};
    while (!u.prefix.empty() && u.prefix.back() == '/') {
        u.prefix.pop_back();
    }
    return u;
}

// One download attempt into `tmp`; returns an error message, empty on success.
inline std::string download_once(httplib::Client& client, const std::string& path, const std::filesystem::path& tmp) {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
        return "cannot write " + tmp.string();
    }
    int status = 0;
    auto res = client.Get(
        path,
        [&](const httplib::Response& r) {
            status = r.status;
            return r.status == 200;
        },
        [&](const char* data, std::size_t n) {
            out.write(data, static_cast<std::streamsize>(n));
            return static_cast<bool>(out);
        });
    out.close();
    if (!res) {
        if (status != 0 && status != 200) {
            return "HTTP " + std::to_string(status);
        }
        return "network error: " + httplib::to_string(res.error());
    }
    if (res->status != 200) {
        return "HTTP " + std::to_string(res->status);
    }
    return {};
}

}  // namespace fetch_detail

/// Fetches runs [first_run, last_run] of subjects [first, last] into
/// dest/Sxxx/SxxxRyy.edf. Failures after all attempts are listed in the
/// report rather than thrown, so one bad file does not abort the rest.
inline FetchReport fetch_dataset(const std::filesystem::path& dest, int first_subject, int last_subject,
                                 const FetchOptions& opts = {}) {
    if (first_subject < 1 || last_subject > 109 || first_subject > last_subject) {
        throw std::invalid_argument("subject range must lie within 1-109");
    }
    const auto url = fetch_detail::split_url(opts.base_url);
    httplib::Client client(url.origin);
    client.set_follow_location(true);
    client.set_connection_timeout(std::chrono::seconds(30));
    client.set_read_timeout(std::chrono::seconds(120));

    FetchReport report;
    for (int s = first_subject; s <= last_subject; ++s) {
        for (int r = opts.first_run; r <= opts.last_run; ++r) {
            const auto rel = edf_relative_path(s, r);
            const auto target = dest / rel;
            const bool present = std::filesystem::exists(target);
            if (present && edf_file_complete(target)) {
                ++report.skipped;
                continue;
            }
            std::filesystem::create_directories(target.parent_path());
            const auto tmp = std::filesystem::path(target.string() + ".part");
            const std::string path = url.prefix + "/" + rel.generic_string();
            std::string error;
            for (int attempt = 1; attempt <= opts.attempts; ++attempt) {
                error = fetch_detail::download_once(client, path, tmp);
                if (error.empty() && !edf_file_complete(tmp)) {
                    error = "length mismatch against the EDF header";
                }
                if (error.empty()) {
                    break;
                }
                if (opts.log) {
                    opts.log(rel.generic_string() + ": attempt " + std::to_string(attempt) + " failed (" + error + ")");
                }
                if (attempt < opts.attempts) {
                    std::this_thread::sleep_for(opts.retry_delay * attempt);
                }
            }
            if (!error.empty()) {
                std::filesystem::remove(tmp);
                report.failed.push_back(rel.generic_string() + ": " + error);
                continue;
            }
            std::filesystem::rename(tmp, target);
            ++(present ? report.repaired : report.downloaded);
            if (opts.log) {
                opts.log(rel.generic_string() + (present ? " repaired" : " downloaded"));
            }
        }
    }
    return report;
}

}  // namespace fastbci
