"""Small numpy neural-network toolkit with hand-written backward passes."""
