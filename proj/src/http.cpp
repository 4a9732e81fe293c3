#include "http.hpp"

#include <httplib.h>

#include "ecn/llm_client.hpp"

namespace ecn::detail {

namespace {

httplib::Client make_client(const EndpointUrl& url, std::chrono::milliseconds timeout) {
    httplib::Client client(url.scheme_host_port);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    return client;
}

HttpResult to_result(const httplib::Result& res, std::chrono::steady_clock::time_point start,
                     std::chrono::milliseconds timeout) {
    HttpResult out;
    if (res) {
        out.status = res->status;
        out.body = res->body;
        return out;
    }
    auto err = res.error();
    out.error = httplib::to_string(err);
    auto elapsed = std::chrono::steady_clock::now() - start;
    if (err == httplib::Error::ConnectionTimeout ||
        (err == httplib::Error::Read && elapsed >= timeout)) {
        out.transport = HttpResult::Transport::Timeout;
    } else if (err == httplib::Error::Connection) {
        out.transport = HttpResult::Transport::ConnectFailed;
    } else {
        out.transport = HttpResult::Transport::Other;
    }
    return out;
}

}  // namespace

HttpResult post_json(const std::string& base_url, const std::string& path, const std::string& body,
                     const std::vector<std::pair<std::string, std::string>>& headers,
                     std::chrono::milliseconds timeout) {
    EndpointUrl url = parse_endpoint_url(base_url);
    auto client = make_client(url, timeout);
    httplib::Headers hdrs;
    for (const auto& [k, v] : headers) hdrs.emplace(k, v);
    auto start = std::chrono::steady_clock::now();
    auto res = client.Post(url.path_prefix + path, hdrs, body, "application/json");
    return to_result(res, start, timeout);
}

HttpResult get(const std::string& base_url, const std::string& path,
               std::chrono::milliseconds timeout) {
    EndpointUrl url = parse_endpoint_url(base_url);
    auto client = make_client(url, timeout);
    auto start = std::chrono::steady_clock::now();
    auto res = client.Get(url.path_prefix + path);
    return to_result(res, start, timeout);
}

}  // namespace ecn::detail
