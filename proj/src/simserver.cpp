#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <thread>

#include <boost/asio/signal_set.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "cvxrom/errors.hpp"
#include "cvxrom/simserver.hpp"

namespace cvxrom {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

namespace {

struct Shared {
    std::shared_ptr<const TetMesh> mesh;
    Material material;
    std::shared_ptr<const ReducedModel> model;
    ServerConfig config;
};

class Connection : public std::enable_shared_from_this<Connection> {
public:
    Connection(tcp::socket socket, const Shared& shared)
        : ws_(std::move(socket)), timer_(ws_.get_executor()), shared_(shared) {}

    void run() {
        http::async_read(ws_.next_layer(), buffer_, request_,
                         [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_request(ec); });
    }

private:
    void on_request(beast::error_code ec) {
        if (ec) return;
        if (!websocket::is_upgrade(request_) || request_.target() != "/sim") {
            reject(http::status::not_found, "websocket endpoint is /sim\n");
            return;
        }
        try {
            session_ = std::make_unique<SimSession>(shared_.mesh, shared_.material, shared_.model, shared_.config.session);
        } catch (const std::exception& e) {
            reject(http::status::internal_server_error, std::string(e.what()) + "\n");
            return;
        }
        ws_.read_message_max(4 * shared_.config.session.max_message_bytes);
        ws_.async_accept(request_, [self = shared_from_this()](beast::error_code ec2) { self->on_accept(ec2); });
    }

    void reject(http::status status, std::string body) {
        auto res = std::make_shared<http::response<http::string_body>>(status, request_.version());
        res->set(http::field::content_type, "text/plain");
        res->keep_alive(false);
        res->body() = std::move(body);
        res->prepare_payload();
        http::async_write(ws_.next_layer(), *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
            beast::error_code ignored;
            self->ws_.next_layer().socket().shutdown(tcp::socket::shutdown_send, ignored);
        });
    }

    void on_accept(beast::error_code ec) {
        if (ec) return;
        control_.push_back(session_->mesh_message());
        flush();
        read();
        last_sent_ = std::chrono::steady_clock::now() - std::chrono::hours(1);
        tick();
    }

    void read() {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec) {
        if (ec) {
            shutdown();
            return;
        }
        const std::string text = beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());
        for (Outgoing& reply : session_->handle(text)) control_.push_back(std::move(reply));
        if (session_->closed()) closing_ = true;
        flush();
        if (!closing_) read();
    }

    void tick() {
        if (closing_ || stopped_) return;
        timer_.expires_after(std::chrono::duration_cast<net::steady_timer::duration>(
            std::chrono::duration<double>(shared_.config.session.dt)));
        timer_.async_wait([self = shared_from_this()](beast::error_code ec) {
            if (ec || self->stopped_ || self->closing_) return;
            Outgoing frame = self->session_->step();
            const auto now = std::chrono::steady_clock::now();
            const double min_gap = shared_rate_gap(self->shared_.config.max_frame_rate);
            if (std::chrono::duration<double>(now - self->last_sent_).count() >= min_gap) {
                // Latest frame wins when the socket is still busy.
                self->frame_ = std::move(frame);
                self->last_sent_ = now;
                self->flush();
            }
            self->tick();
        });
    }

    static double shared_rate_gap(double rate) { return rate > 0.0 ? 1.0 / rate : 0.0; }

    void flush() {
        if (writing_ || stopped_) return;
        if (!control_.empty()) {
            current_ = std::move(control_.front());
            control_.pop_front();
        } else if (frame_) {
            current_ = std::move(*frame_);
            frame_.reset();
        } else {
            if (closing_) close();
            return;
        }
        writing_ = true;
        ws_.binary(current_.binary);
        ws_.async_write(net::buffer(current_.data), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            self->writing_ = false;
            if (ec) {
                self->shutdown();
                return;
            }
            self->flush();
        });
    }

    void close() {
        if (stopped_) return;
        stopped_ = true;
        timer_.cancel();
        ws_.async_close(websocket::close_code::policy_error, [self = shared_from_this()](beast::error_code) {});
    }

    void shutdown() {
        stopped_ = true;
        timer_.cancel();
    }

    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> request_;
    net::steady_timer timer_;
    const Shared& shared_;
    std::unique_ptr<SimSession> session_;
    std::deque<Outgoing> control_;
    std::optional<Outgoing> frame_;
    Outgoing current_;
    std::chrono::steady_clock::time_point last_sent_;
    bool writing_ = false;
    bool closing_ = false;
    bool stopped_ = false;
};

} // namespace

struct SimServer::Impl {
    Shared shared;
    net::io_context io{1};
    tcp::acceptor acceptor{io};
    net::signal_set signals{io};
    std::thread thread;
    std::mutex mutex;
    std::condition_variable done_cv;
    bool done = false;

    void accept() {
        acceptor.async_accept(io, [this](beast::error_code ec, tcp::socket socket) {
            if (ec) {
                if (ec == net::error::operation_aborted) return;
            } else {
                std::make_shared<Connection>(std::move(socket), shared)->run();
            }
            accept();
        });
    }
};

SimServer::SimServer(std::shared_ptr<const TetMesh> mesh, Material material, std::shared_ptr<const ReducedModel> model,
                     ServerConfig config)
    : impl_(std::make_unique<Impl>()) {
    // Fail early on a mismatched checkpoint instead of on the first connection.
    SimSession probe(mesh, material, model, config.session);
    if (!(config.max_frame_rate >= 0.0)) throw InvalidArgument("max_frame_rate must be non-negative");
    impl_->shared = {std::move(mesh), material, std::move(model), std::move(config)};
}

SimServer::~SimServer() {
    stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::uint16_t SimServer::start() {
    auto& im = *impl_;
    beast::error_code ec;
    const auto address = net::ip::make_address(im.shared.config.address, ec);
    if (ec) throw InvalidArgument("invalid listen address '" + im.shared.config.address + "'");
    const tcp::endpoint endpoint(address, im.shared.config.port);
    im.acceptor.open(endpoint.protocol(), ec);
    if (!ec) im.acceptor.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) im.acceptor.bind(endpoint, ec);
    if (!ec) im.acceptor.listen(net::socket_base::max_listen_connections, ec);
    if (ec) throw Error("cannot listen on " + im.shared.config.address + ":" + std::to_string(im.shared.config.port) + ": " + ec.message());
    im.signals.add(SIGINT);
    im.signals.add(SIGTERM);
    im.signals.async_wait([this](beast::error_code e, int) {
        if (!e) stop();
    });
    im.accept();
    im.thread = std::thread([&im] {
        im.io.run();
        std::lock_guard lock(im.mutex);
        im.done = true;
        im.done_cv.notify_all();
    });
    return im.acceptor.local_endpoint().port();
}

void SimServer::wait() {
    std::unique_lock lock(impl_->mutex);
    impl_->done_cv.wait(lock, [this] { return impl_->done; });
}

void SimServer::stop() { impl_->io.stop(); }

} // namespace cvxrom
