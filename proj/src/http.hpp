#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace ecn::detail {

struct HttpResult {
    enum class Transport { Ok, ConnectFailed, Timeout, Other };

    Transport transport = Transport::Ok;
    int status = 0;
    std::string body;
    std::string error;  // transport error description
};

// POSTs a JSON body to `base_url` + `path`. Never throws on transport errors.
HttpResult post_json(const std::string& base_url, const std::string& path, const std::string& body,
                     const std::vector<std::pair<std::string, std::string>>& headers,
                     std::chrono::milliseconds timeout);

HttpResult get(const std::string& base_url, const std::string& path,
               std::chrono::milliseconds timeout);

}  // namespace ecn::detail
