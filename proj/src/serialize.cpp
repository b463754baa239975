#include "rvseg/serialize.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "rvseg/errors.hpp"

namespace rvseg {
namespace {

constexpr char kMagic[4] = {'I', 'T', 'S', 'E'};

template <typename U>
void put(std::ostream& os, U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const char* what) {
    U v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is) throw IoError(std::string("truncated stream while reading ") + what);
    return v;
}

void expect_magic(std::istream& is) {
    char m[4];
    is.read(m, 4);
    if (!is) throw IoError("truncated stream while reading blob magic");
    if (std::memcmp(m, kMagic, 4) != 0) throw IoError("bad blob magic (expected ITSE)");
}

}  // namespace

template <typename T>
void write_blob(std::ostream& os, const Tensor<T>& t) {
    if (!t.defined()) throw ContractError("write_blob: undefined tensor");
    os.write(kMagic, 4);
    put<uint32_t>(os, kBlobVersion);
    put<uint8_t>(os, static_cast<uint8_t>(dtype_of<T>()));
    put<uint32_t>(os, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape()) put<uint64_t>(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(T) * static_cast<size_t>(t.numel())));
    if (!os) throw IoError("write failure while emitting blob payload");
}

template <typename T>
Tensor<T> read_blob(std::istream& is) {
    expect_magic(is);
    const auto version = get<uint32_t>(is, "blob version");
    if (version != kBlobVersion)
        throw IoError("unsupported blob version " + std::to_string(version));
    const auto dtype = get<uint8_t>(is, "blob dtype");
    if (dtype > 1) throw IoError("unknown blob dtype tag " + std::to_string(dtype));
    if (static_cast<Dtype>(dtype) != dtype_of<T>())
        throw IoError(std::string("blob dtype is ") + dtype_name(static_cast<Dtype>(dtype)) +
                      ", expected " + dtype_name(dtype_of<T>()));
    const auto rank = get<uint32_t>(is, "blob rank");
    if (rank == 0 || rank > 8) throw IoError("implausible blob rank " + std::to_string(rank));
    Shape shape(rank);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        const auto e = get<uint64_t>(is, "blob extent");
        if (e == 0 || e > (1ull << 32)) throw IoError("implausible blob extent");
        shape[i] = static_cast<int64_t>(e);
        numel *= shape[i];
    }
    std::vector<T> data(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(sizeof(T) * data.size()));
    if (!is) throw IoError("truncated stream while reading blob payload");
    return Tensor<T>::from_data(shape, std::move(data));
}

Dtype peek_blob_dtype(std::istream& is) {
    const auto pos = is.tellg();
    expect_magic(is);
    (void)get<uint32_t>(is, "blob version");
    const auto dtype = get<uint8_t>(is, "blob dtype");
    is.seekg(pos);
    if (dtype > 1) throw IoError("unknown blob dtype tag " + std::to_string(dtype));
    return static_cast<Dtype>(dtype);
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    write_blob(os, t);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return read_blob<T>(is);
}

template <typename T>
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    put<uint32_t>(os, static_cast<uint32_t>(config_json.size()));
    os.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    for (const auto& [name, t] : tensors) {
        put<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_blob(os, t);
    }
    if (!os) throw IoError("write failure while emitting checkpoint: " + path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    Checkpoint<T> ck;
    const auto header_len = get<uint32_t>(is, "checkpoint header length");
    ck.config_json.resize(header_len);
    is.read(ck.config_json.data(), header_len);
    if (!is) throw IoError("truncated checkpoint header: " + path);
    while (true) {
        uint32_t name_len = 0;
        is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        if (is.eof()) break;
        if (!is) throw IoError("truncated tensor name length: " + path);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw IoError("truncated tensor name: " + path);
        ck.tensors.emplace_back(std::move(name), read_blob<T>(is));
    }
    return ck;
}

std::string read_checkpoint_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len == 0 || len > (1u << 20))
        throw IoError("checkpoint header unreadable: " + path);
    std::string header(len, '\0');
    in.read(header.data(), len);
    if (!in) throw IoError("checkpoint header truncated: " + path);
    return header;
}

template void write_blob<float>(std::ostream&, const Tensor<float>&);
template void write_blob<double>(std::ostream&, const Tensor<double>&);
template Tensor<float> read_blob<float>(std::istream&);
template Tensor<double> read_blob<double>(std::istream&);
template void save_tensor<float>(const std::string&, const Tensor<float>&);
template void save_tensor<double>(const std::string&, const Tensor<double>&);
template Tensor<float> load_tensor<float>(const std::string&);
template Tensor<double> load_tensor<double>(const std::string&);
template void save_checkpoint<float>(const std::string&, const std::string&,
                                     const std::vector<std::pair<std::string, Tensor<float>>>&);
template void save_checkpoint<double>(const std::string&, const std::string&,
                                      const std::vector<std::pair<std::string, Tensor<double>>>&);
template Checkpoint<float> load_checkpoint<float>(const std::string&);
template Checkpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace rvseg
