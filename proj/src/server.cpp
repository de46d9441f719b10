#include "advoverlay/server.hpp"

#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>
#include <variant>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace advoverlay {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

namespace {

std::map<std::string, std::string> query_parameters(std::string_view target) {
  std::map<std::string, std::string> out;
  const auto q = target.find('?');
  if (q == std::string_view::npos) return out;
  std::string_view rest = target.substr(q + 1);
  while (!rest.empty()) {
    const auto amp = rest.find('&');
    const std::string_view pair = rest.substr(0, amp);
    const auto eq = pair.find('=');
    out[std::string(pair.substr(0, eq))] = eq == std::string_view::npos ? "" : std::string(pair.substr(eq + 1));
    if (amp == std::string_view::npos) break;
    rest = rest.substr(amp + 1);
  }
  return out;
}

std::string_view path_of(std::string_view target) { return target.substr(0, target.find('?')); }

std::string_view target_of(const http::request<http::string_body>& req) {
  return {req.target().data(), req.target().size()};
}

std::string_view mime_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  if (ext == ".svg") return "image/svg+xml";
  return "application/octet-stream";
}

class WsConnection;

// Serialises one session's messages on a worker thread. Frames that arrive
// while another frame is still queued replace it (queue depth 1).
class SessionWorker : public std::enable_shared_from_this<SessionWorker> {
 public:
  SessionWorker(std::string id, const Detector& detector, const SessionOptions& options, Clock clock)
      : engine_(std::move(id), detector, options, std::move(clock)) {
    thread_ = std::thread([this] { run(); });
  }

  ~SessionWorker() { shutdown(); }

  void shutdown() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

  SessionEngine& engine() { return engine_; }

  void attach(ClientId id, std::weak_ptr<WsConnection> conn) {
    std::lock_guard lock(mutex_);
    connections_[id] = std::move(conn);
  }

  void detach(ClientId id) {
    engine_.leave(id);
    std::lock_guard lock(mutex_);
    connections_.erase(id);
  }

  void enqueue(ClientId client, std::string text);

 private:
  struct Item {
    ClientId client;
    std::variant<WireMessage, std::string> body;  // parsed, or raw text that failed to parse
  };

  void run();
  void deliver(ClientId sender, const std::vector<Outgoing>& out);

  SessionEngine engine_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<Item> inbox_;
  std::map<ClientId, std::weak_ptr<WsConnection>> connections_;
  bool stopping_ = false;
  std::thread thread_;
};

class WsConnection : public std::enable_shared_from_this<WsConnection> {
 public:
  WsConnection(tcp::socket socket, std::size_t max_message) : ws_(std::move(socket)) {
    ws_.read_message_max(max_message);
  }

  void start(http::request<http::string_body> req, std::shared_ptr<SessionWorker> worker, Role role, bool subscribe) {
    worker_ = std::move(worker);
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this(), role, subscribe](beast::error_code ec) {
      if (ec) return;
      try {
        self->client_ = self->worker_->engine().join(role, subscribe);
      } catch (const ProtocolError& e) {
        const WireMessage err{MessageType::Error, self->worker_->engine().id(), 0, {{"message", e.what()}}};
        self->send(serialize(err));
        self->closing_ = true;
        return;
      }
      self->worker_->attach(*self->client_, self);
      self->read();
    });
  }

  void send(std::string text) {
    net::post(ws_.get_executor(), [self = shared_from_this(), text = std::move(text)]() mutable {
      self->outbox_.push_back(std::move(text));
      if (self->outbox_.size() == 1) self->write();
    });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      self->worker_->enqueue(*self->client_, std::move(text));
      self->read();
    });
  }

  void write() {
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      self->outbox_.pop_front();
      if (!self->outbox_.empty()) return self->write();
      if (self->closing_) self->ws_.async_close(websocket::close_code::policy_error, [self](beast::error_code) {});
    });
  }

  void close() {
    if (client_) worker_->detach(*client_);
    client_.reset();
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  std::shared_ptr<SessionWorker> worker_;
  std::optional<ClientId> client_;
  bool closing_ = false;
};

void SessionWorker::enqueue(ClientId client, std::string text) {
  Item item{client, std::move(text)};
  try {
    item.body = parse_message(std::get<std::string>(item.body));
  } catch (const ProtocolError&) {
    // left as text; the engine turns it into an error reply
  }
  std::optional<std::pair<ClientId, std::uint64_t>> dropped;
  {
    std::lock_guard lock(mutex_);
    const auto* msg = std::get_if<WireMessage>(&item.body);
    if (msg && msg->type == MessageType::Frame) {
      for (auto it = inbox_.begin(); it != inbox_.end(); ++it) {
        const auto* queued = std::get_if<WireMessage>(&it->body);
        if (queued && queued->type == MessageType::Frame) {
          dropped = {it->client, queued->sequence};
          inbox_.erase(it);
          break;
        }
      }
    }
    inbox_.push_back(std::move(item));
  }
  cv_.notify_one();
  if (dropped) deliver(dropped->first, {{Outgoing::Audience::Sender, engine_.dropped_frame(dropped->second)}});
}

void SessionWorker::run() {
  for (;;) {
    Item item;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [&] { return stopping_ || !inbox_.empty(); });
      if (stopping_) return;
      item = std::move(inbox_.front());
      inbox_.pop_front();
    }
    std::vector<Outgoing> out;
    try {
      out = std::visit([&](const auto& body) { return engine_.handle(item.client, body); }, item.body);
    } catch (const std::exception& e) {
      spdlog::error("session {}: {}", engine_.id(), e.what());
      out = {{Outgoing::Audience::Sender, {MessageType::Error, engine_.id(), 0, {{"message", e.what()}}}}};
    }
    deliver(item.client, out);
  }
}

void SessionWorker::deliver(ClientId sender, const std::vector<Outgoing>& out) {
  std::vector<std::pair<ClientId, std::shared_ptr<WsConnection>>> targets;
  {
    std::lock_guard lock(mutex_);
    for (auto& [id, weak] : connections_)
      if (auto c = weak.lock()) targets.emplace_back(id, std::move(c));
  }
  for (const auto& o : out) {
    const std::string text = serialize(o.message);
    for (const auto& [id, conn] : targets) {
      const bool wanted = o.audience == Outgoing::Audience::Everyone ||
                          (o.audience == Outgoing::Audience::Sender && id == sender) ||
                          (o.audience == Outgoing::Audience::AdvSubscribers && engine_.is_subscribed(id));
      if (wanted) conn->send(text);
    }
  }
}

}  // namespace

struct AttackServer::Impl {
  const Detector& detector;
  ServerOptions options;
  Clock clock;
  net::io_context io;
  tcp::acceptor acceptor{io};
  std::vector<std::thread> threads;
  std::mutex sessions_mutex;
  std::map<std::string, std::shared_ptr<SessionWorker>> sessions;  // kept for the server's lifetime
  std::mutex stop_mutex;
  std::condition_variable stop_cv;
  bool stopped = false;

  Impl(const Detector& d, ServerOptions o, Clock c) : detector(d), options(std::move(o)), clock(std::move(c)) {}

  // Worker threads must be gone before connections (and with them the last
  // worker references) are torn down.
  ~Impl() {
    for (auto& [_, worker] : sessions) worker->shutdown();
  }

  std::shared_ptr<SessionWorker> session(const std::string& id) {
    std::lock_guard lock(sessions_mutex);
    auto& slot = sessions[id];
    if (!slot) slot = std::make_shared<SessionWorker>(id, detector, options.session, clock);
    return slot;
  }

  void accept() {
    acceptor.async_accept(net::make_strand(io), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      serve_http(std::make_shared<beast::tcp_stream>(std::move(socket)));
      accept();
    });
  }

  void serve_http(std::shared_ptr<beast::tcp_stream> stream) {
    auto buffer = std::make_shared<beast::flat_buffer>();
    auto req = std::make_shared<http::request<http::string_body>>();
    stream->expires_after(std::chrono::seconds(30));
    http::async_read(*stream, *buffer, *req, [this, stream, buffer, req](beast::error_code ec, std::size_t) {
      if (ec) return;
      if (websocket::is_upgrade(*req) && path_of(target_of(*req)) == "/attack") return upgrade(stream, *req);
      respond(stream, *req);
    });
  }

  void upgrade(const std::shared_ptr<beast::tcp_stream>& stream, const http::request<http::string_body>& req) {
    auto params = query_parameters(target_of(req));
    const std::string id = params.count("session") && !params["session"].empty() ? params["session"] : "default";
    const Role role = params["role"] == "source" ? Role::Source : Role::Panel;
    const bool subscribe = params.count("subscribe") ? params["subscribe"] == "1" : role == Role::Panel;
    stream->expires_never();
    const std::size_t max_message = 2 * options.session.max_frame_bytes + (1u << 20);
    auto conn = std::make_shared<WsConnection>(stream->release_socket(), max_message);
    conn->start(req, session(id), role, subscribe);
  }

  void respond(const std::shared_ptr<beast::tcp_stream>& stream, const http::request<http::string_body>& req) {
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req.version());
    res->keep_alive(false);
    const std::string path(path_of(target_of(req)));
    std::filesystem::path file;
    if (!options.static_dir.empty() && req.method() == http::verb::get && path.find("..") == std::string::npos)
      file = options.static_dir / (path == "/" ? std::string("index.html") : path.substr(1));
    std::error_code fs_ec;
    if (!file.empty() && std::filesystem::is_regular_file(file, fs_ec)) {
      std::ifstream in(file, std::ios::binary);
      res->result(http::status::ok);
      res->set(http::field::content_type, std::string(mime_type(file)));
      res->body().assign(std::istreambuf_iterator<char>(in), {});
    } else {
      res->result(http::status::not_found);
      res->set(http::field::content_type, "text/plain");
      res->body() = "not found\n";
    }
    res->prepare_payload();
    http::async_write(*stream, *res, [stream, res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      stream->socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }
};

AttackServer::AttackServer(const Detector& detector, ServerOptions options, Clock clock)
    : impl_(std::make_unique<Impl>(detector, std::move(options), std::move(clock))) {
  if (impl_->options.io_threads < 1) throw ConfigError("io_threads must be at least 1");
  // Validate the session defaults up front rather than on first connection.
  SessionEngine probe("probe", detector, impl_->options.session, impl_->clock);
}

AttackServer::~AttackServer() { stop(); }

unsigned short AttackServer::start() {
  const tcp::endpoint endpoint(net::ip::make_address(impl_->options.address), impl_->options.port);
  impl_->acceptor.open(endpoint.protocol());
  impl_->acceptor.set_option(net::socket_base::reuse_address(true));
  impl_->acceptor.bind(endpoint);
  impl_->acceptor.listen(net::socket_base::max_listen_connections);
  impl_->accept();
  for (int i = 0; i < impl_->options.io_threads; ++i) impl_->threads.emplace_back([this] { impl_->io.run(); });
  return impl_->acceptor.local_endpoint().port();
}

void AttackServer::wait() {
  std::unique_lock lock(impl_->stop_mutex);
  impl_->stop_cv.wait(lock, [&] { return impl_->stopped; });
}

void AttackServer::stop() {
  {
    std::lock_guard lock(impl_->stop_mutex);
    if (impl_->stopped) return;
    impl_->stopped = true;
  }
  impl_->io.stop();
  for (auto& t : impl_->threads) t.join();
  impl_->threads.clear();
  impl_->stop_cv.notify_all();
}

}  // namespace advoverlay
