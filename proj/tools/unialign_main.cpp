#include <iostream>

int main() {
    std::cout << "unialign CLI placeholder\n";
    return 0;
}
