// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "agentcache/daemon.hpp"

#include <netdb.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <set>
#include <stdexcept>

#include "agentcache/capacity.hpp"
#include "agentcache/error.hpp"
#include "agentcache/persistence.hpp"

namespace agentcache {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ServiceConfig prepared(ServiceConfig c) {
    if (c.chunk_tokens == 0 || c.max_batch == 0) {
        throw Error(ErrorCode::InvalidValue, "chunk_tokens and max_batch must be positive");
    }
    fs::create_directories(c.cache_dir);
    return c;
}

json error_response(const json& id, std::string_view code, std::string_view message) {
    return {{"id", id}, {"ok", false}, {"error", {{"code", code}, {"message", message}}}};
}

json events_json(const std::vector<Event>& events) {
    json arr = json::array();
    for (const auto& e : events) arr.push_back(e.to_json());
    return arr;
}

bool send_all(int fd, std::string_view data) {
    while (!data.empty()) {
        const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data.remove_prefix(static_cast<size_t>(n));
    }
    return true;
}

// Malformed params, reported as invalid_request rather than an engine error.
struct BadParams : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string require_string(const json& params, const char* key) {
    if (!params.contains(key) || !params[key].is_string()) {
        throw BadParams(std::string("params.") + key + " must be a string");
    }
    return params[key].get<std::string>();
}

}  // namespace

struct Daemon::Connection {
    explicit Connection(int f) : fd(f) {}
    ~Connection() { ::close(fd); }

    void write_line(const std::string& line) {
        std::lock_guard lock(mutex);
        if (!open) return;
        if (!send_all(fd, line) || !send_all(fd, "\n")) open = false;
    }

    void shutdown() {
        std::lock_guard lock(mutex);
        open = false;
        ::shutdown(fd, SHUT_RDWR);
    }

    int fd;
    std::mutex mutex;
    bool open = true;
};

Daemon::Daemon(ServiceConfig config)
    : config_(prepared(std::move(config))),
      engine_(resolve_spec(config_.model)),
      pool_(engine_.spec(), PoolConfig{config_.budget_bytes, config_.cache_dir}),
      scheduler_(engine_, pool_, SchedulerConfig{config_.chunk_tokens, config_.max_batch}) {}

Daemon::~Daemon() { stop(); }

void Daemon::start() {
    if (!config_.socket_path.empty()) {
        sockaddr_un addr{};
        if (config_.socket_path.size() >= sizeof(addr.sun_path)) {
            throw Error(ErrorCode::InvalidValue, "socket path too long: " + config_.socket_path);
        }
        addr.sun_family = AF_UNIX;
        std::memcpy(addr.sun_path, config_.socket_path.c_str(), config_.socket_path.size() + 1);
        ::unlink(config_.socket_path.c_str());
        listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (listen_fd_ < 0 || ::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            throw Error(ErrorCode::InvalidValue,
                        "cannot bind " + config_.socket_path + ": " + std::strerror(errno));
        }
    } else {
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(config_.tcp_port);
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
        const int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        if (listen_fd_ < 0 || ::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            throw Error(ErrorCode::InvalidValue,
                        "cannot bind port " + std::to_string(config_.tcp_port) + ": " + std::strerror(errno));
        }
        socklen_t len = sizeof addr;
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        bound_port_ = ntohs(addr.sin_port);
    }
    if (::listen(listen_fd_, 64) != 0) throw Error(ErrorCode::InvalidValue, std::string("listen: ") + std::strerror(errno));
    scheduler_thread_ = std::thread(&Daemon::scheduler_loop, this);
    accept_thread_ = std::thread(&Daemon::accept_loop, this);
}

std::string Daemon::endpoint() const {
    if (!config_.socket_path.empty()) return "unix:" + config_.socket_path;
    return "tcp:127.0.0.1:" + std::to_string(bound_port_);
}

void Daemon::wait() {
    std::unique_lock lock(jobs_mutex_);
    jobs_cv_.wait(lock, [&] { return stopping_.load(); });
}

void Daemon::stop() {
    stopping_ = true;
    jobs_cv_.notify_all();
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    if (accept_thread_.joinable()) accept_thread_.join();
    if (scheduler_thread_.joinable()) scheduler_thread_.join();
    std::vector<std::thread> readers;
    {
        std::lock_guard lock(conns_mutex_);
        for (auto& c : conns_) c->shutdown();
        readers.swap(readers_);
    }
    for (auto& t : readers) t.join();
    {
        std::lock_guard lock(conns_mutex_);
        conns_.clear();
    }
    if (listen_fd_ >= 0) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        if (!config_.socket_path.empty()) ::unlink(config_.socket_path.c_str());
    }
}

void Daemon::accept_loop() {
    while (!stopping_) {
        const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0) {
            if (errno == EINTR || errno == ECONNABORTED) continue;
            break;
        }
        auto conn = std::make_shared<Connection>(fd);
        std::lock_guard lock(conns_mutex_);
        if (stopping_) {
            conn->shutdown();
            break;
        }
        conns_.push_back(conn);
        readers_.emplace_back(&Daemon::read_loop, this, conn);
    }
}

void Daemon::read_loop(std::shared_ptr<Connection> conn) {
    std::string buffer;
    char chunk[65536];
    size_t scanned = 0;
    while (true) {
        const ssize_t n = ::recv(conn->fd, chunk, sizeof chunk, 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        buffer.append(chunk, static_cast<size_t>(n));
        size_t start = 0;
        while (true) {
            const size_t nl = buffer.find('\n', std::max(start, scanned));
            if (nl == std::string::npos) break;
            std::string_view line(buffer.data() + start, nl - start);
            start = nl + 1;
            scanned = start;
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            if (line.size() > kMaxLineBytes) {
                conn->write_line(error_response(nullptr, "line_too_long", "request line exceeds 16 MiB").dump());
                conn->shutdown();
                return;
            }
            if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
            json req = json::parse(line, nullptr, false);
            if (req.is_discarded()) {
                conn->write_line(error_response(nullptr, "parse_error", "request is not valid JSON").dump());
                continue;
            }
            post([this, conn, req = std::move(req)] {
                current_ = conn;
                const json resp = handle(req);
                current_.reset();
                conn->write_line(resp.dump());
            });
        }
        buffer.erase(0, start);
        scanned = buffer.size();
        if (buffer.size() > kMaxLineBytes) {
            conn->write_line(error_response(nullptr, "line_too_long", "request line exceeds 16 MiB").dump());
            conn->shutdown();
            return;
        }
    }
    conn->shutdown();
}

void Daemon::post(Job job) {
    {
        std::lock_guard lock(jobs_mutex_);
        jobs_.push_back(std::move(job));
    }
    jobs_cv_.notify_all();
}

void Daemon::scheduler_loop() {
    while (true) {
        Job job;
        {
            std::unique_lock lock(jobs_mutex_);
            jobs_cv_.wait(lock, [&] {
                return stopping_.load() || !jobs_.empty() || (config_.auto_run && !scheduler_.idle());
            });
            if (stopping_) break;
            if (!jobs_.empty()) {
                job = std::move(jobs_.front());
                jobs_.pop_front();
            }
        }
        if (job) {
            job();
        } else {
            route(scheduler_.step());
        }
    }
}

void Daemon::route(const std::vector<Event>& events) {
    for (const auto& e : events) {
        if (e.request_id.empty()) continue;
        auto it = owners_.find(e.request_id);
        if (it == owners_.end()) continue;
        if (auto conn = it->second.lock()) {
            conn->write_line(json{{"request_id", e.request_id}, {"event", e.to_json()}}.dump());
        }
        if (e.kind == EventKind::Done) owners_.erase(it);
    }
}

json Daemon::handle(const json& request) {
    const json id = request.is_object() && request.contains("id") ? request["id"] : json(nullptr);
    if (!request.is_object() || !request.contains("op") || !request["op"].is_string()) {
        return error_response(id, "invalid_request", "request must be an object with a string 'op'");
    }
    static const std::set<std::string> kOps{"submit", "step",  "run",      "match", "save_all", "restore",
                                            "drop",   "stats", "capacity", "info",  "shutdown"};
    const std::string op = request["op"].get<std::string>();
    if (kOps.count(op) == 0) return error_response(id, "unknown_op", "unknown op '" + op + "'");
    const json params = request.contains("params") ? request["params"] : json::object();
    if (!params.is_object()) return error_response(id, "invalid_request", "'params' must be an object");
    try {
        return {{"id", id}, {"ok", true}, {"result", dispatch(op, params, id)}};
    } catch (const Error& e) {
        return error_response(id, to_string(e.code()), e.message());
    } catch (const BadParams& e) {
        return error_response(id, "invalid_request", e.what());
    } catch (const json::exception& e) {
        return error_response(id, "invalid_request", e.what());
    } catch (const std::exception& e) {
        return error_response(id, "internal", e.what());
    }
}

json Daemon::dispatch(const std::string& op, const json& params, const json& id) {
    if (op == "submit") {
        Request r;
        r.request_id = params.contains("request_id") ? require_string(params, "request_id")
                                                      : (id.is_string() ? id.get<std::string>() : id.dump());
        r.agent_id = require_string(params, "agent");
        r.prompt = require_string(params, "prompt");
        r.max_tokens = params.value("max_tokens", 1u);
        r.persistent_cache_prefix = params.value("persistent", true);
        scheduler_.submit(r);
        owners_[r.request_id] = current_;
        return {{"request_id", r.request_id}};
    }
    if (op == "step") {
        const auto events = scheduler_.step();
        route(events);
        return {{"events", events_json(events)}, {"idle", scheduler_.idle()}};
    }
    if (op == "run") {
        const auto events = scheduler_.run_until_idle();
        route(events);
        return {{"events", events_json(events)}};
    }
    if (op == "match") {
        return scheduler_.match(require_string(params, "agent"), require_string(params, "prompt")).to_json();
    }
    if (op == "save_all") {
        return {{"events", events_json(scheduler_.save_all())}};
    }
    if (op == "restore") {
        std::vector<std::string> agents;
        if (params.contains("agents")) {
            agents = params["agents"].get<std::vector<std::string>>();
        } else {
            agents = persisted_agents(config_.cache_dir);
        }
        return {{"events", events_json(scheduler_.restore(agents))}};
    }
    if (op == "drop") {
        const std::string agent = require_string(params, "agent");
        scheduler_.drop(agent, params.value("delete_disk", false));
        return {{"dropped", agent}};
    }
    if (op == "stats") {
        const PoolStats s = pool_.stats();
        const EngineCounters e = engine_.counters();
        const SchedulerCounters& c = scheduler_.counters();
        return {{"resident_bytes", s.resident_bytes},
                {"budget_bytes", s.budget_bytes},
                {"agents_hot", s.agents_hot},
                {"agents_warm", s.agents_warm},
                {"evictions", s.evictions},
                {"reloads", s.reloads},
                {"eviction_failures", s.eviction_failures},
                {"over_budget", s.over_budget},
                {"engine", {{"tokens_prefilled", e.tokens_prefilled},
                            {"prefill_calls", e.prefill_calls},
                            {"decode_steps", e.decode_steps},
                            {"decode_rows", e.decode_rows},
                            {"reentrancy_violations", e.reentrancy_violations}}},
                {"scheduler", {{"steps", c.steps},
                               {"prefill_chunks", c.prefill_chunks},
                               {"prefill_tokens", c.prefill_tokens},
                               {"reused_tokens", c.reused_tokens},
                               {"decode_steps", c.decode_steps},
                               {"idle", scheduler_.idle()}}}};
    }
    if (op == "capacity") {
        const ModelCacheSpec spec = resolve_spec(params.value("model", config_.model));
        uint64_t budget = 0;
        if (params.contains("budget") && params["budget"].is_number_unsigned()) {
            budget = params["budget"].get<uint64_t>();
        } else {
            budget = parse_byte_size(params.value("budget", std::string("10.2GB")));
        }
        const auto contexts = parse_context_list(params.value("contexts", std::string("4k,8k,16k,32k")));
        CapacityOptions opts;
        opts.block_rounded = params.value("block_rounded", false);
        return capacity_json(spec, budget, capacity_table(spec, budget, contexts, opts));
    }
    if (op == "info") {
        const std::string agent = require_string(params, "agent");
        const AgentCache& c = pool_.get_cache(agent);
        return {{"agent", agent},
                {"state", to_string(c.state)},
                {"tokens", c.token_count()},
                {"blocks", c.block_count()},
                {"resident_bytes", c.resident_bytes()},
                {"transcript", c.transcript_text},
                {"checksum", fingerprint_hex(c.checksum())},
                {"on_disk", pool_.on_disk(agent)}};
    }
    if (op == "shutdown") {
        stopping_ = true;
        if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
        jobs_cv_.notify_all();
        return {{"stopping", true}};
    }
    throw Error(ErrorCode::InvalidArgument, "unhandled op '" + op + "'");
}

int serve(const ServiceConfig& config) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    ::signal(SIGPIPE, SIG_IGN);

    Daemon daemon(config);
    daemon.start();
    std::cout << "listening " << daemon.endpoint() << std::endl;
    const timespec poll{0, 100'000'000};
    while (!daemon.stopped()) {
        if (sigtimedwait(&set, nullptr, &poll) > 0) break;
    }
    daemon.stop();
    return 0;
}

Client::Client(const std::string& endpoint) {
    std::string ep = endpoint;
    if (ep.starts_with("tcp:")) {
        const std::string rest = ep.substr(4);
        const size_t colon = rest.rfind(':');
        if (colon == std::string::npos) throw Error(ErrorCode::InvalidValue, "tcp endpoint needs host:port");
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (::getaddrinfo(rest.substr(0, colon).c_str(), rest.substr(colon + 1).c_str(), &hints, &res) != 0) {
            throw Error(ErrorCode::InvalidValue, "cannot resolve " + rest);
        }
        for (addrinfo* p = res; p != nullptr; p = p->ai_next) {
            fd_ = ::socket(p->ai_family, p->ai_socktype | SOCK_CLOEXEC, p->ai_protocol);
            if (fd_ >= 0 && ::connect(fd_, p->ai_addr, p->ai_addrlen) == 0) break;
            if (fd_ >= 0) ::close(fd_);
            fd_ = -1;
        }
        ::freeaddrinfo(res);
    } else {
        if (ep.starts_with("unix:")) ep = ep.substr(5);
        sockaddr_un addr{};
        if (ep.size() >= sizeof(addr.sun_path)) throw Error(ErrorCode::InvalidValue, "socket path too long");
        addr.sun_family = AF_UNIX;
        std::memcpy(addr.sun_path, ep.c_str(), ep.size() + 1);
        fd_ = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
        if (fd_ >= 0 && ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
            ::close(fd_);
            fd_ = -1;
        }
    }
    if (fd_ < 0) throw Error(ErrorCode::NotFound, "cannot connect to " + endpoint + ": " + std::strerror(errno));
}

Client::~Client() {
    if (fd_ >= 0) ::close(fd_);
}

void Client::send_line(const std::string& line) {
    if (!send_all(fd_, line + "\n")) throw std::runtime_error("send failed: " + std::string(std::strerror(errno)));
}

std::string Client::read_line() {
    while (true) {
        const size_t nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        char chunk[65536];
        const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return {};
        buffer_.append(chunk, static_cast<size_t>(n));
    }
}

json Client::call(const std::string& op, const json& params) {
    const std::string id = std::to_string(next_id_++);
    send_line(json{{"id", id}, {"op", op}, {"params", params}}.dump());
    while (true) {
        const std::string line = read_line();
        if (line.empty()) throw std::runtime_error("connection closed before response to " + op);
        json msg = json::parse(line);
        if (msg.contains("event")) {
            events_.push_back(std::move(msg));
        } else if (msg.value("id", json(nullptr)) == json(id)) {
            return msg;
        }
    }
}

}  // namespace agentcache
