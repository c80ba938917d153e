#pragma once

// Dense row-major tensors. Value handles share storage; ops allocate fresh
// outputs, so aliasing writes only happen where a caller explicitly mutates
// (optimizer updates). Scalar type is a template parameter: float is the
// production path, double is instantiated for finite-difference checks.

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stylealign {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape)
        : shape_(std::move(shape)),
          buf_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {}
    Tensor(Shape shape, std::shared_ptr<std::vector<T>> buf)
        : shape_(std::move(shape)), buf_(std::move(buf)) {
        assert(buf_ && static_cast<int64_t>(buf_->size()) == shape_numel(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T v) {
        Tensor t(std::move(shape));
        std::fill(t.buf_->begin(), t.buf_->end(), v);
        return t;
    }
    static Tensor scalar(T v) { return full({1}, v); }
    static Tensor from_vector(Shape shape, std::vector<T> v) {
        auto buf = std::make_shared<std::vector<T>>(std::move(v));
        return Tensor(std::move(shape), std::move(buf));
    }

    bool defined() const { return static_cast<bool>(buf_); }
    const Shape& shape() const { return shape_; }
    int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t numel() const { return buf_ ? static_cast<int64_t>(buf_->size()) : 0; }

    T* data() { return buf_->data(); }
    const T* data() const { return buf_->data(); }
    T& operator[](int64_t i) { return (*buf_)[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return (*buf_)[static_cast<size_t>(i)]; }

    T& at(std::initializer_list<int64_t> idx) { return (*buf_)[flat(idx)]; }
    const T& at(std::initializer_list<int64_t> idx) const { return (*buf_)[flat(idx)]; }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.buf_ = std::make_shared<std::vector<T>>(*buf_);
        return t;
    }

    // Shares storage; numel must match.
    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != numel())
            throw std::invalid_argument("reshape numel mismatch " + shape_str(shape_) +
                                        " -> " + shape_str(shape));
        return Tensor(std::move(shape), buf_);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out{shape_};
        const T* src = data();
        U* dst = out.data();
        for (int64_t i = 0; i < numel(); ++i) dst[i] = static_cast<U>(src[i]);
        return out;
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    int64_t flat(std::initializer_list<int64_t> idx) const {
        assert(idx.size() == shape_.size());
        int64_t f = 0;
        size_t k = 0;
        for (int64_t i : idx) {
            f = f * shape_[k] + i;
            ++k;
        }
        return f;
    }

    Shape shape_;
    std::shared_ptr<std::vector<T>> buf_;
};

template <typename T>
void check_shape(const Tensor<T>& t, const Shape& want, const char* what) {
    if (t.shape() != want)
        throw std::invalid_argument(std::string(what) + ": expected " + shape_str(want) +
                                    ", got " + shape_str(t.shape()));
}

} // namespace stylealign
