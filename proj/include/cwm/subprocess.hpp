// Line-oriented child process with bidirectional pipes and read timeouts.
// Linux-only (fork/exec through /bin/sh).
#pragma once

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <string>

namespace cwm::proc {

struct SubprocessError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Subprocess {
public:
    explicit Subprocess(const std::string& command) {
        int to_child[2], from_child[2];
        if (pipe(to_child) != 0 || pipe(from_child) != 0)
            throw SubprocessError("pipe failed: " + std::string(strerror(errno)));
        pid_ = fork();
        if (pid_ < 0) throw SubprocessError("fork failed");
        if (pid_ == 0) {
            dup2(to_child[0], STDIN_FILENO);
            dup2(from_child[1], STDOUT_FILENO);
            close(to_child[0]);
            close(to_child[1]);
            close(from_child[0]);
            close(from_child[1]);
            execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            _exit(127);
        }
        close(to_child[0]);
        close(from_child[1]);
        write_fd_ = to_child[1];
        read_fd_ = from_child[0];
    }

    Subprocess(const Subprocess&) = delete;
    Subprocess& operator=(const Subprocess&) = delete;

    ~Subprocess() {
        if (write_fd_ >= 0) close(write_fd_);
        if (read_fd_ >= 0) close(read_fd_);
        if (pid_ > 0) {
            kill(pid_, SIGTERM);
            int status = 0;
            waitpid(pid_, &status, 0);
        }
    }

    void write_line(const std::string& line) {
        std::string buf = line + "\n";
        size_t off = 0;
        while (off < buf.size()) {
            ssize_t n = ::write(write_fd_, buf.data() + off, buf.size() - off);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw SubprocessError("write failed: " + std::string(strerror(errno)));
            }
            off += static_cast<size_t>(n);
        }
    }

    // Returns false on timeout or closed pipe.
    bool read_line(std::string& out, int timeout_ms) {
        out.clear();
        for (;;) {
            auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                out = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return true;
            }
            struct pollfd pfd{read_fd_, POLLIN, 0};
            int pr = poll(&pfd, 1, timeout_ms);
            if (pr <= 0) return false;
            char chunk[4096];
            ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
            if (n <= 0) return false;
            buffer_.append(chunk, static_cast<size_t>(n));
        }
    }

private:
    pid_t pid_ = -1;
    int write_fd_ = -1;
    int read_fd_ = -1;
    std::string buffer_;
};

} // namespace cwm::proc
