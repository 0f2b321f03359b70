// Copyright (C) 2026 The agentcache Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "agentcache/block_pool.hpp"
#include "agentcache/config.hpp"
#include "agentcache/engine.hpp"
#include "agentcache/scheduler.hpp"

namespace agentcache {

inline constexpr size_t kMaxLineBytes = 16u << 20;

/// Newline-delimited JSON cache service.
///
/// Requests are {"id", "op", "params"}; responses {"id", "ok", "result"} or
/// {"id", "ok": false, "error": {"code", "message"}}. Scheduler events for a
/// submitted request are also written to the submitting connection as
/// {"request_id", "event"} lines.
class Daemon {
public:
    explicit Daemon(ServiceConfig config);
    ~Daemon();
    Daemon(const Daemon&) = delete;
    Daemon& operator=(const Daemon&) = delete;

    /// Binds and starts the accept and scheduler lanes. Uses socket_path when
    /// set, otherwise TCP on 127.0.0.1:tcp_port (0 picks a free port).
    void start();

    /// Blocks until a shutdown op or stop().
    void wait();

    void stop();
    bool stopped() const noexcept { return stopping_.load(); }

    /// "unix:<path>" or "tcp:127.0.0.1:<port>".
    std::string endpoint() const;

    /// Handles one parsed request on the calling thread. Exposed for tests;
    /// the server calls it on the scheduler lane only.
    nlohmann::json handle(const nlohmann::json& request);

private:
    struct Connection;
    using Job = std::function<void()>;

    void accept_loop();
    void read_loop(std::shared_ptr<Connection> conn);
    void scheduler_loop();
    void post(Job job);
    void route(const std::vector<Event>& events);
    nlohmann::json dispatch(const std::string& op, const nlohmann::json& params, const nlohmann::json& id);

    ServiceConfig config_;
    SyntheticEngine engine_;
    BlockPool pool_;
    Scheduler scheduler_;

    int listen_fd_ = -1;
    uint16_t bound_port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::thread scheduler_thread_;

    std::mutex jobs_mutex_;
    std::condition_variable jobs_cv_;
    std::deque<Job> jobs_;

    std::mutex conns_mutex_;
    std::vector<std::shared_ptr<Connection>> conns_;
    std::vector<std::thread> readers_;

    // scheduler lane only
    std::map<std::string, std::weak_ptr<Connection>> owners_;
    std::shared_ptr<Connection> current_;
};

/// Runs a daemon until SIGINT/SIGTERM or a shutdown op. Prints
/// "listening <endpoint>" on stdout once ready. Returns the exit code.
int serve(const ServiceConfig& config);

/// Blocking line client for the daemon protocol.
class Client {
public:
    /// endpoint: "unix:<path>", "tcp:<host>:<port>" or a bare socket path.
    explicit Client(const std::string& endpoint);
    ~Client();
    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    /// Sends one request and returns its response. Event lines read while
    /// waiting are kept in events().
    nlohmann::json call(const std::string& op, const nlohmann::json& params = nlohmann::json::object());

    void send_line(const std::string& line);
    /// Next line from the server; empty when the connection closed.
    std::string read_line();

    const std::vector<nlohmann::json>& events() const noexcept { return events_; }
    void clear_events() { events_.clear(); }

private:
    int fd_ = -1;
    std::string buffer_;
    uint64_t next_id_ = 1;
    std::vector<nlohmann::json> events_;
};

}  // namespace agentcache
