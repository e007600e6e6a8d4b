# Mantém a raiz do repositório no sys.path para `import app` nos testes.
