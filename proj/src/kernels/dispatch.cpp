#include <atomic>
#include <cstdlib>
#include <string>

#include "emi/kernels.hpp"

namespace emi::kernels {
namespace {

const KernelTable* find(std::string_view name) {
  for (const auto* table : available_kernels()) {
    if (name == table->name) return table;
  }
  return nullptr;
}

const KernelTable* initial_choice() {
  if (const char* env = std::getenv("EMI_KERNELS")) {
    if (const auto* table = find(env)) return table;
  }
  if (const auto* table = avx2_kernels()) return table;
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_choice()};
  return table;
}

}  // namespace

std::vector<const KernelTable*> available_kernels() {
  std::vector<const KernelTable*> out{&scalar_kernels()};
  if (const auto* avx2 = avx2_kernels()) out.push_back(avx2);
  return out;
}

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool select(std::string_view name) {
  const auto* table = find(name);
  if (!table) return false;
  current().store(table, std::memory_order_relaxed);
  return true;
}

}  // namespace emi::kernels
