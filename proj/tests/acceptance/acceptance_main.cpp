// placeholder, replaced once the full stack exists
int main() { return 0; }
