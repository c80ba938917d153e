#pragma once

// RFC-4180 CSV writing/reading. All numeric formatting goes through here so
// repeated runs emit byte-identical files.

#include <string>
#include <vector>

namespace stylealign {

class CsvWriter {
public:
    void row(const std::vector<std::string>& fields);
    const std::string& text() const { return out_; }
    void save(const std::string& path) const;

    static std::string num(double v, int precision = 6);

private:
    std::string out_;
};

std::vector<std::vector<std::string>> read_csv(const std::string& path);

} // namespace stylealign
