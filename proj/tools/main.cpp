#include <iostream>

int main() {
  std::cout << "dualflow (placeholder)\n";
  return 0;
}
